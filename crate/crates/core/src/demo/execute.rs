//! Running instruction sets in the environment to obtain expert
//! trajectories.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::experts::oracle_routes;
use super::instructions::{compile_to_actions, ExecutableSet};
use super::DemoError;
use crate::env::{Observation, RoadEnv};
use crate::trajectory::{Source, Trajectory, Transition};

/// What to do with an agent whose provided route does not validate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvalidRouteFallback {
    /// No expert trajectory for that agent this round.
    SkipAgent,
    /// Drive the shortest path instead and flag the trajectory.
    #[default]
    OracleSubstitute,
}

#[derive(Debug, Clone)]
pub struct DemoExecution {
    /// One entry per agent; `None` when the agent was skipped.
    pub trajectories: Vec<Option<Trajectory>>,
    /// Whether the provided route validated, per agent.
    pub valid: Vec<bool>,
}

/// Execute `set` from the initial state. `log_prob(agent, obs, action)`
/// supplies the current policy's log-probability for each recorded step.
///
/// Agents without a usable route are still driven along their shortest path
/// so that the joint rollout stays well-defined; with
/// [`InvalidRouteFallback::SkipAgent`] their trajectories are dropped.
pub fn execute_demos<F>(
    env: &mut RoadEnv,
    set: &ExecutableSet,
    fallback: InvalidRouteFallback,
    seed: u64,
    mut log_prob: F,
) -> Result<DemoExecution, DemoError>
where
    F: FnMut(usize, &Observation, usize) -> f64,
{
    let graph = env.graph().clone();
    let specs = env.specs().to_vec();
    let n = specs.len();
    let oracle = oracle_routes(&graph, &specs)?;

    let mut queues: Vec<VecDeque<usize>> = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for (agent, spec) in specs.iter().enumerate() {
        let waypoints = set
            .sequences
            .get(agent)
            .map(|s| s.waypoints())
            .unwrap_or_default();
        match compile_to_actions(&graph, spec, &waypoints) {
            Ok(actions) => {
                valid.push(true);
                queues.push(actions.into());
            }
            Err(_) => {
                valid.push(false);
                let actions = compile_to_actions(&graph, spec, &oracle[agent])?;
                queues.push(actions.into());
            }
        }
    }

    let initial = env.reset(seed);
    let mut trajectories: Vec<Trajectory> = specs
        .iter()
        .zip(initial)
        .map(|(s, obs)| Trajectory::new(Source::Expert, s.agent_id, s.start, obs))
        .collect();

    while !env.episode_done() {
        let mut actions = vec![0; n];
        let mut acting = vec![false; n];
        for agent in 0..n {
            if env.is_active(agent) {
                actions[agent] = queues[agent].pop_front().ok_or(DemoError::RouteExhausted { agent })?;
                acting[agent] = true;
            }
        }
        let before: Vec<Observation> = (0..n).map(|a| env.observation(a).clone()).collect();
        let result = env.step(&actions)?;
        for agent in 0..n {
            if !acting[agent] {
                continue;
            }
            let lp = log_prob(agent, &before[agent], actions[agent]);
            trajectories[agent].push(
                Transition {
                    obs: before[agent].clone(),
                    action: actions[agent],
                    reward: result.rewards[agent],
                    log_prob: lp,
                },
                env.state().position[agent],
                result.observations[agent].clone(),
            );
            if result.done[agent] {
                trajectories[agent].arrived = true;
            }
        }
    }

    let trajectories = trajectories
        .into_iter()
        .zip(&valid)
        .map(|(mut t, &ok)| {
            if ok {
                Some(t)
            } else {
                match fallback {
                    InvalidRouteFallback::SkipAgent => None,
                    InvalidRouteFallback::OracleSubstitute => {
                        t.substituted = true;
                        Some(t)
                    }
                }
            }
        })
        .collect();
    Ok(DemoExecution { trajectories, valid })
}
