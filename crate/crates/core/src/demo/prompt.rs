//! Prompt construction and feedback-driven refinement.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::AgentSpec;
use crate::graph::{JunctionId, RoadGraph};

pub const TASK_DESCRIPTION: &str = "You are planning routes for vehicles in a road network. \
Each vehicle starts at a junction and must reach its destination junction. \
Vehicles move along directed roads from junction to junction. \
Every step costs time, so shorter routes earn higher reward, \
and arriving at the destination earns a bonus.";

pub const OUTPUT_CONTRACT: &str = "Reply with one JSON object that maps each agent id (as a string) \
to the list of junction ids it should visit, starting with its start junction and ending with its \
destination. Consecutive junctions must be connected by a directed road listed above. \
Example: {\"0\": [0, 1, 2], \"1\": [5, 6]}";

pub const REFINE_INSTRUCTION: &str = "Use this feedback to improve the routes: fix every invalid route \
and shorten routes whose reward is low.";

/// Feedback for one agent from one refinement round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFeedback {
    pub agent: usize,
    pub agent_path: Vec<JunctionId>,
    pub agent_reward: f64,
    pub expert_path: Vec<JunctionId>,
    pub expert_reward: f64,
    pub expert_valid: bool,
    pub dtw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    /// 1-based refinement index.
    pub phase: usize,
    pub epoch: usize,
    pub agents: Vec<AgentFeedback>,
}

/// Everything the prompt is built from. Records are append-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptState {
    pub task: String,
    pub graph_section: String,
    pub agents: Vec<AgentSpec>,
    records: Vec<RefinementRecord>,
}

fn path_text(path: &[JunctionId]) -> String {
    let items: Vec<String> = path.iter().map(|j| j.to_string()).collect();
    format!("[{}]", items.join(", "))
}

/// Node table plus the directed adjacency list.
pub fn describe_graph(graph: &RoadGraph) -> String {
    let mut s = String::from("Junctions (id: x, y):\n");
    for (id, (x, y)) in graph.coords().iter().enumerate() {
        let _ = writeln!(s, "{id}: {x:.3}, {y:.3}");
    }
    s.push_str("Directed roads (from -> to [length]):\n");
    for id in 0..graph.node_count() {
        let exits: Vec<String> = graph
            .outgoing(id)
            .map(|e| format!("{} [{:.3}]", e.to, e.length))
            .collect();
        if !exits.is_empty() {
            let _ = writeln!(s, "{id} -> {}", exits.join(", "));
        }
    }
    s
}

impl PromptState {
    pub fn new(graph: &RoadGraph, agents: &[AgentSpec]) -> Self {
        Self {
            task: TASK_DESCRIPTION.to_string(),
            graph_section: describe_graph(graph),
            agents: agents.to_vec(),
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[RefinementRecord] {
        &self.records
    }
}

/// Deterministic serialization: task, graph, agents, output contract, then
/// every refinement record in order.
pub fn build_prompt(state: &PromptState) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "## Task\n{}\n", state.task);
    let _ = writeln!(s, "## Road network\n{}", state.graph_section);
    s.push_str("## Agents (id: start -> destination, departure step)\n");
    for a in &state.agents {
        let _ = writeln!(s, "{}: {} -> {}, departs at {}", a.agent_id, a.start, a.dest, a.depart_time);
    }
    let _ = writeln!(s, "\n## Output format\n{OUTPUT_CONTRACT}");
    for rec in &state.records {
        let _ = writeln!(s, "\n## Feedback round {} (epoch {})", rec.phase, rec.epoch);
        for f in &rec.agents {
            let _ = writeln!(
                s,
                "agent {}: learned route {} reward {:.3}; suggested route {} reward {:.3} ({}); DTW {:.3}",
                f.agent,
                path_text(&f.agent_path),
                f.agent_reward,
                path_text(&f.expert_path),
                f.expert_reward,
                if f.expert_valid { "valid" } else { "invalid" },
                f.dtw,
            );
        }
        let _ = writeln!(s, "{REFINE_INSTRUCTION}");
    }
    s
}

/// Append one feedback round.
pub fn refine_prompt(state: &mut PromptState, epoch: usize, feedback: Vec<AgentFeedback>) {
    let phase = state.records.len() + 1;
    state.records.push(RefinementRecord {
        phase,
        epoch,
        agents: feedback,
    });
}

/// Whitespace-separated chunks.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::grid;

    fn state() -> PromptState {
        let specs = vec![AgentSpec { agent_id: 0, start: 0, dest: 24, depart_time: 0 }];
        PromptState::new(&grid(5, 1.0), &specs)
    }

    fn feedback(dtw: f64) -> Vec<AgentFeedback> {
        vec![AgentFeedback {
            agent: 0,
            agent_path: vec![0, 1, 0, 5],
            agent_reward: -3.0,
            expert_path: vec![0, 1, 2],
            expert_reward: 17.2,
            expert_valid: true,
            dtw,
        }]
    }

    #[test]
    fn fresh_prompt_has_sections() {
        let p = build_prompt(&state());
        assert!(p.contains("0 -> 1 [1.000], 5 [1.000]"));
        assert!(p.contains("0: 0 -> 24, departs at 0"));
        assert!(!p.contains("Feedback round"));
        assert_eq!(p, build_prompt(&state()));
    }

    #[test]
    fn refinement_appends() {
        let mut s = state();
        let before = build_prompt(&s);
        refine_prompt(&mut s, 5, feedback(12.345));
        let after = build_prompt(&s);
        assert!(after.starts_with(&before));
        assert!(after.len() > before.len());
        assert!(after.contains("DTW 12.345"));
        refine_prompt(&mut s, 5, feedback(12.345));
        assert_eq!(s.records().len(), 2);
        assert_ne!(s.records()[0], s.records()[1]);
        assert!(count_tokens(&build_prompt(&s)) > count_tokens(&after));
    }
}
