//! Per-agent trajectories from policy rollouts and executed demonstrations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Observation;
use crate::graph::{JunctionId, RoadGraph};

/// Where a trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    /// Rollout of the agent's own policy.
    Agent,
    /// Execution of an expert instruction sequence.
    Expert,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    /// Log-probability of `action` under the policy that was current when
    /// the transition was recorded.
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub source: Source,
    pub agent_id: usize,
    pub transitions: Vec<Transition>,
    pub terminal_obs: Observation,
    /// Junctions visited, starting with the start junction.
    pub junction_path: Vec<JunctionId>,
    /// Reached the destination (absorbing) rather than being cut off.
    pub arrived: bool,
    /// Expert route replaced by the shortest-path oracle after the provided
    /// route failed validation.
    pub substituted: bool,
}

impl Trajectory {
    pub fn new(source: Source, agent_id: usize, start: JunctionId, initial_obs: Observation) -> Self {
        Self {
            source,
            agent_id,
            transitions: Vec::new(),
            terminal_obs: initial_obs,
            junction_path: vec![start],
            arrived: false,
            substituted: false,
        }
    }

    /// Append a step; `next_obs` becomes the terminal observation.
    pub fn push(&mut self, transition: Transition, next_junction: JunctionId, next_obs: Observation) {
        self.transitions.push(transition);
        self.junction_path.push(next_junction);
        self.terminal_obs = next_obs;
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("junction {0} is not in the graph")]
pub struct UnknownJunction(pub JunctionId);

/// Map a trajectory's junction path onto planar coordinates.
pub fn to_feature_seq(traj: &Trajectory, graph: &RoadGraph) -> Result<Vec<(f64, f64)>, UnknownJunction> {
    traj.junction_path
        .iter()
        .map(|&j| graph.coord(j).ok_or(UnknownJunction(j)))
        .collect()
}
