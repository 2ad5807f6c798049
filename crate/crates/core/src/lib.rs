//! Decentralized multi-agent PPO for routing vehicles on a road graph,
//! with expert route demonstrations mixed into each agent's policy update
//! according to how closely the agent already follows them (DTW).

pub mod demo;
pub mod dtw;
pub mod env;
pub mod graph;
pub mod harness;
pub mod nn;
pub mod ppo;
pub mod rng;
pub mod trainer;
pub mod trajectory;
