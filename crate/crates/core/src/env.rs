//! Multi-agent routing environment.
//!
//! Each agent drives from its start junction to its destination, one edge
//! per joint step. Observations follow a fixed layout of length `2 + 2m`:
//!
//! ```text
//! [0]        current junction id / (N - 1)
//! [1]        destination junction id / (N - 1)
//! [2 + 2i]   score of the i-th outgoing edge (0 when the slot is padding)
//! [3 + 2i]   end junction id of the i-th edge, normalized (-1 when padding)
//! ```
//!
//! Rewards are `-c_time + kappa * (phi(prev) - phi(curr)) + bonus * arrived`
//! with `phi(j)` the remaining shortest distance to the destination.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{JunctionId, RoadGraph};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("agent {agent}: {reason}")]
    InvalidSpec { agent: usize, reason: String },
    #[error("agent {agent} chose action {action}, which is masked out")]
    MaskedAction { agent: usize, action: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("episode is over; reset before stepping")]
    EpisodeOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: usize,
    pub start: JunctionId,
    pub dest: JunctionId,
    #[serde(default)]
    pub depart_time: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub time_penalty: f64,
    pub shaping: f64,
    pub arrival_bonus: f64,
    /// Extra time penalty per additional agent sharing an edge in the same
    /// step. `None` disables congestion.
    pub congestion: Option<f64>,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            time_penalty: 0.1,
            shaping: 1.0,
            arrival_bonus: 10.0,
            congestion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Observation {
    pub fn valid_actions(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub step: usize,
    pub position: Vec<JunctionId>,
    pub done: Vec<bool>,
    pub cumulative_reward: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: Vec<bool>,
    pub episode_done: bool,
}

/// Build the observation for an agent standing at `at`.
pub fn observe_at(graph: &RoadGraph, at: JunctionId, dest: JunctionId, spawned: bool) -> Observation {
    let m = graph.max_out_degree();
    let norm = (graph.node_count().max(2) - 1) as f64;
    let mut features = vec![0.0; 2 + 2 * m];
    let mut mask = vec![false; m];
    features[0] = at as f64 / norm;
    features[1] = dest as f64 / norm;
    for slot in 0..m {
        match graph.out_edge(at, slot) {
            Some(edge) => {
                features[2 + 2 * slot] = graph.edge_score(edge, dest);
                features[3 + 2 * slot] = edge.to as f64 / norm;
                mask[slot] = spawned;
            }
            None => features[3 + 2 * slot] = -1.0,
        }
    }
    Observation { features, mask }
}

/// Validate agent specs against a graph.
pub fn check_specs(graph: &RoadGraph, specs: &[AgentSpec]) -> Result<(), EnvError> {
    for (i, s) in specs.iter().enumerate() {
        let bad = |reason: String| EnvError::InvalidSpec { agent: i, reason };
        if s.agent_id != i {
            return Err(bad(format!("agent_id {} out of order", s.agent_id)));
        }
        if !graph.contains(s.start) || !graph.contains(s.dest) {
            return Err(bad(format!("junction {} or {} not in graph", s.start, s.dest)));
        }
        if s.start == s.dest {
            return Err(bad("start equals destination".into()));
        }
        if !graph.distance(s.start, s.dest).is_finite() {
            return Err(bad(format!("no route {} -> {}", s.start, s.dest)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RoadEnv {
    graph: Arc<RoadGraph>,
    specs: Vec<AgentSpec>,
    reward: RewardParams,
    step_limit: usize,
    state: EnvState,
    last_obs: Vec<Observation>,
}

impl RoadEnv {
    pub fn new(
        graph: Arc<RoadGraph>,
        specs: Vec<AgentSpec>,
        reward: RewardParams,
        step_limit: usize,
    ) -> Result<Self, EnvError> {
        check_specs(&graph, &specs)?;
        let n = specs.len();
        let mut env = Self {
            graph,
            specs,
            reward,
            step_limit,
            state: EnvState {
                step: 0,
                position: vec![0; n],
                done: vec![false; n],
                cumulative_reward: vec![0.0; n],
                seed: 0,
            },
            last_obs: Vec::new(),
        };
        env.reset(0);
        Ok(env)
    }

    pub fn graph(&self) -> &Arc<RoadGraph> {
        &self.graph
    }

    pub fn specs(&self) -> &[AgentSpec] {
        &self.specs
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn step_limit(&self) -> usize {
        self.step_limit
    }

    pub fn reward_params(&self) -> &RewardParams {
        &self.reward
    }

    pub fn n_agents(&self) -> usize {
        self.specs.len()
    }

    pub fn obs_dim(&self) -> usize {
        2 + 2 * self.graph.max_out_degree()
    }

    pub fn action_dim(&self) -> usize {
        self.graph.max_out_degree()
    }

    /// Place every agent at its start junction. The environment itself has
    /// no stochastic transitions; `seed` is carried in the state for
    /// provenance.
    pub fn reset(&mut self, seed: u64) -> Vec<Observation> {
        let n = self.specs.len();
        self.state = EnvState {
            step: 0,
            position: self.specs.iter().map(|s| s.start).collect(),
            done: vec![false; n],
            cumulative_reward: vec![0.0; n],
            seed,
        };
        self.last_obs = (0..n).map(|i| self.observe(i)).collect();
        self.last_obs.clone()
    }

    pub fn is_active(&self, agent: usize) -> bool {
        !self.state.done[agent] && self.state.step >= self.specs[agent].depart_time
    }

    pub fn episode_done(&self) -> bool {
        self.state.step >= self.step_limit || self.state.done.iter().all(|&d| d)
    }

    pub fn observation(&self, agent: usize) -> &Observation {
        &self.last_obs[agent]
    }

    /// Fresh observation from the current state.
    pub fn observe(&self, agent: usize) -> Observation {
        let spec = &self.specs[agent];
        observe_at(
            &self.graph,
            self.state.position[agent],
            spec.dest,
            self.is_active(agent),
        )
    }

    /// Advance all agents by one edge. Actions of inactive agents are ignored.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if self.episode_done() {
            return Err(EnvError::EpisodeOver);
        }
        let n = self.specs.len();
        if actions.len() != n {
            return Err(EnvError::ActionCount {
                expected: n,
                got: actions.len(),
            });
        }
        let mut moves = vec![None; n];
        for (agent, &action) in actions.iter().enumerate() {
            if !self.is_active(agent) {
                continue;
            }
            let obs = &self.last_obs[agent];
            if !obs.mask.get(action).copied().unwrap_or(false) {
                return Err(EnvError::MaskedAction { agent, action });
            }
            let edge = *self
                .graph
                .out_edge(self.state.position[agent], action)
                .expect("mask matches adjacency");
            moves[agent] = Some(edge);
        }

        let mut rewards = vec![0.0; n];
        for agent in 0..n {
            let Some(edge) = moves[agent] else { continue };
            let dest = self.specs[agent].dest;
            let mut time_cost = self.reward.time_penalty;
            if let Some(factor) = self.reward.congestion {
                let sharing = moves
                    .iter()
                    .flatten()
                    .filter(|e| e.from == edge.from && e.to == edge.to)
                    .count();
                time_cost *= 1.0 + factor * (sharing - 1) as f64;
            }
            let before = self.graph.distance(edge.from, dest);
            let after = self.graph.distance(edge.to, dest);
            // a move into a region that cannot reach dest gets no shaping
            let shaping = if after.is_finite() {
                self.reward.shaping * (before - after)
            } else {
                0.0
            };
            let arrived = edge.to == dest;
            let r = -time_cost + shaping + if arrived { self.reward.arrival_bonus } else { 0.0 };
            rewards[agent] = r;
            self.state.position[agent] = edge.to;
            self.state.cumulative_reward[agent] += r;
            if arrived {
                self.state.done[agent] = true;
            }
        }
        self.state.step += 1;

        for agent in 0..n {
            let was_done_before = moves[agent].is_none() && self.state.done[agent];
            if !was_done_before {
                self.last_obs[agent] = self.observe(agent);
            }
        }

        Ok(StepResult {
            observations: self.last_obs.clone(),
            rewards,
            done: self.state.done.clone(),
            episode_done: self.episode_done(),
        })
    }
}
