//! Instruction schema, model-output parsing, route validation and
//! compilation into edge-slot actions.

use serde_json::{Map, Value};

use super::DemoError;
use crate::env::AgentSpec;
use crate::graph::{JunctionId, RoadGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    MoveTo,
}

/// `[Command, Parameter, AgentID]`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub command: Command,
    pub parameter: JunctionId,
    pub agent_id: usize,
}

impl std::fmt::Display for Instruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let cmd = match self.command {
            Command::MoveTo => "MoveTo",
        };
        write!(f, "[{cmd}, Intersection_{}, Agent_{}]", self.parameter, self.agent_id)
    }
}

/// One agent's instruction sequence. `origin` is the first junction of the
/// route as written; the instructions move from there.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentSequence {
    pub origin: Option<JunctionId>,
    pub instructions: Vec<Instruction>,
}

impl AgentSequence {
    pub fn from_waypoints(agent_id: usize, waypoints: &[JunctionId]) -> Self {
        let Some((&origin, rest)) = waypoints.split_first() else {
            return Self::default();
        };
        Self {
            origin: Some(origin),
            instructions: rest
                .iter()
                .map(|&parameter| Instruction {
                    command: Command::MoveTo,
                    parameter,
                    agent_id,
                })
                .collect(),
        }
    }

    /// The full junction sequence, origin included.
    pub fn waypoints(&self) -> Vec<JunctionId> {
        self.origin
            .into_iter()
            .chain(self.instructions.iter().map(|i| i.parameter))
            .collect()
    }
}

/// Per-agent instruction sequences for every agent `0..n`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutableSet {
    pub sequences: Vec<AgentSequence>,
}

impl ExecutableSet {
    pub fn from_routes(routes: &[Vec<JunctionId>]) -> Self {
        Self {
            sequences: routes
                .iter()
                .enumerate()
                .map(|(agent, r)| AgentSequence::from_waypoints(agent, r))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Locate the first balanced `{...}` fragment, ignoring braces in strings.
fn balanced_objects(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    let mut start = 0;
    while let Some(offset) = text[start..].find('{') {
        let open = start + offset;
        let mut depth = 0usize;
        let mut quote: Option<u8> = None;
        let mut escaped = false;
        let mut close = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if let Some(q) = quote {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == q {
                    quote = None;
                }
                continue;
            }
            match b {
                b'"' | b'\'' => quote = Some(b),
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match close {
            Some(end) => {
                found.push(&text[open..=end]);
                start = end + 1;
            }
            None => break,
        }
    }
    found
}

fn extract_mapping(text: &str) -> Option<Map<String, Value>> {
    for fragment in balanced_objects(text) {
        if let Ok(Value::Object(map)) = serde_json::from_str(fragment) {
            return Some(map);
        }
        let repaired = fragment.replace('\'', "\"");
        if let Ok(Value::Object(map)) = serde_json::from_str(&repaired) {
            return Some(map);
        }
    }
    None
}

/// Trailing decimal digits of a token such as `"Agent_3"` or `"7"`.
fn trailing_index(token: &str) -> Option<usize> {
    let token = token.trim();
    let digits = token.len() - token.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let (prefix, number) = token.split_at(token.len() - digits);
    let prefix = prefix.trim_end_matches(['_', ' ', '-']);
    if prefix.is_empty() || prefix.chars().all(|c| c.is_ascii_alphabetic()) {
        number.parse().ok()
    } else {
        None
    }
}

fn junction_of(value: &Value) -> Option<usize> {
    match value {
        Value::Number(n) => n.as_u64().map(|v| v as usize),
        Value::String(s) => trailing_index(s),
        _ => None,
    }
}

fn parse_agent_route(
    key: &str,
    value: &Value,
    n_agents: usize,
    graph: &RoadGraph,
) -> Result<(usize, Vec<JunctionId>), DemoError> {
    let agent = trailing_index(key).ok_or_else(|| DemoError::UnknownAgent(key.to_string()))?;
    if agent >= n_agents {
        return Err(DemoError::UnknownAgent(key.to_string()));
    }
    let Value::Array(items) = value else {
        return Err(DemoError::Unextractable(format!("{key}: {value}")));
    };
    let mut route = Vec::with_capacity(items.len());
    for item in items {
        match junction_of(item) {
            Some(j) if graph.contains(j) => route.push(j),
            _ => {
                return Err(DemoError::UnknownJunction {
                    agent,
                    fragment: item.to_string(),
                })
            }
        }
    }
    Ok((agent, route))
}

/// Strict parse: any problem with any agent rejects the whole response.
///
/// The first listed junction of each route is its origin; the rest become
/// `MoveTo` instructions. Agents absent from the mapping get an empty
/// sequence.
pub fn parse_instructions(text: &str, n_agents: usize, graph: &RoadGraph) -> Result<ExecutableSet, DemoError> {
    let (set, errors) = parse_lenient(text, n_agents, graph);
    match errors.into_iter().next() {
        Some(err) => Err(err),
        None => Ok(set),
    }
}

/// Per-agent parse: agents whose entries are malformed are left empty and
/// their errors reported alongside.
pub fn parse_lenient(text: &str, n_agents: usize, graph: &RoadGraph) -> (ExecutableSet, Vec<DemoError>) {
    let mut set = ExecutableSet {
        sequences: vec![AgentSequence::default(); n_agents],
    };
    let Some(map) = extract_mapping(text) else {
        let snippet: String = text.chars().take(80).collect();
        return (set, vec![DemoError::Unextractable(snippet)]);
    };
    let mut errors = Vec::new();
    for (key, value) in &map {
        match parse_agent_route(key, value, n_agents, graph) {
            Ok((agent, route)) => set.sequences[agent] = AgentSequence::from_waypoints(agent, &route),
            Err(e) => errors.push(e),
        }
    }
    (set, errors)
}

/// Starts at the agent's start, ends at its destination, and follows
/// existing directed edges throughout.
pub fn validate_route(graph: &RoadGraph, spec: &AgentSpec, waypoints: &[JunctionId]) -> bool {
    waypoints.len() >= 2
        && waypoints.first() == Some(&spec.start)
        && waypoints.last() == Some(&spec.dest)
        && waypoints.windows(2).all(|w| graph.edge_between(w[0], w[1]).is_some())
}

/// Edge-slot action for each hop of a valid route.
pub fn compile_to_actions(
    graph: &RoadGraph,
    spec: &AgentSpec,
    waypoints: &[JunctionId],
) -> Result<Vec<usize>, DemoError> {
    if !validate_route(graph, spec, waypoints) {
        return Err(DemoError::InvalidRoute {
            agent: spec.agent_id,
            route: waypoints.to_vec(),
        });
    }
    Ok(waypoints
        .windows(2)
        .map(|w| graph.slot_of(w[0], w[1]).expect("validated edge"))
        .collect())
}

/// Percentage of valid routes, `100 * valid / total`.
pub fn validity_rate(valid: &[bool]) -> f64 {
    if valid.is_empty() {
        return 0.0;
    }
    100.0 * valid.iter().filter(|&&v| v).count() as f64 / valid.len() as f64
}
