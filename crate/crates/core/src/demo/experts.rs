//! Offline expert providers: shortest-path oracle and a Logit route
//! sampler over k-shortest candidate routes.

use rand::Rng;

use super::instructions::ExecutableSet;
use super::DemoError;
use crate::env::AgentSpec;
use crate::graph::{JunctionId, RoadGraph, Route};

pub const LOGIT_CANDIDATES: usize = 8;

pub fn oracle_routes(graph: &RoadGraph, specs: &[AgentSpec]) -> Result<Vec<Vec<JunctionId>>, DemoError> {
    specs
        .iter()
        .map(|s| {
            graph
                .shortest_path(s.start, s.dest)
                .map(|r| r.path)
                .ok_or(DemoError::NoRoute { agent: s.agent_id })
        })
        .collect()
}

/// Every agent follows its shortest path.
pub fn oracle_expert(graph: &RoadGraph, specs: &[AgentSpec]) -> Result<ExecutableSet, DemoError> {
    Ok(ExecutableSet::from_routes(&oracle_routes(graph, specs)?))
}

/// Choice probabilities `∝ exp(-cost / temperature)`.
pub fn logit_probabilities(candidates: &[Route], temperature: f64) -> Vec<f64> {
    let best = candidates.iter().map(|r| r.length).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = candidates
        .iter()
        .map(|r| (-(r.length - best) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Sample one route per agent from its [`LOGIT_CANDIDATES`] shortest
/// loopless routes.
pub fn logit_expert<R: Rng>(
    graph: &RoadGraph,
    specs: &[AgentSpec],
    temperature: f64,
    rng: &mut R,
) -> Result<ExecutableSet, DemoError> {
    if !(temperature > 0.0) {
        return Err(DemoError::Temperature(temperature));
    }
    let mut routes = Vec::with_capacity(specs.len());
    for s in specs {
        let candidates = graph.k_shortest_paths(s.start, s.dest, LOGIT_CANDIDATES);
        if candidates.is_empty() {
            return Err(DemoError::NoRoute { agent: s.agent_id });
        }
        let probs = logit_probabilities(&candidates, temperature);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = candidates.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        routes.push(candidates[pick].path.clone());
    }
    Ok(ExecutableSet::from_routes(&routes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::instructions::validate_route;
    use crate::graph::{grid, line, Edge};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(start: usize, dest: usize) -> AgentSpec {
        AgentSpec { agent_id: 0, start, dest, depart_time: 0 }
    }

    #[test]
    fn oracle_on_line_and_pair() {
        let set = oracle_expert(&line(), &[spec(0, 2)]).unwrap();
        assert_eq!(set.sequences[0].waypoints(), vec![0, 1, 2]);
        let pair = RoadGraph::new(vec![(0.0, 0.0), (1.0, 0.0)], vec![Edge { from: 0, to: 1, length: 1.0 }]).unwrap();
        let set = oracle_expert(&pair, &[spec(0, 1)]).unwrap();
        assert_eq!(set.sequences[0].instructions.len(), 1);
        assert!(matches!(oracle_expert(&line(), &[spec(2, 0)]), Err(DemoError::NoRoute { agent: 0 })));
    }

    #[test]
    fn oracle_grid_corner_validates() {
        let g = grid(5, 1.0);
        let s = spec(0, 24);
        let set = oracle_expert(&g, &[s]).unwrap();
        let wp = set.sequences[0].waypoints();
        assert!(validate_route(&g, &s, &wp));
        assert_eq!(g.path_length(&wp), Some(8.0));
    }

    #[test]
    fn single_route_always_chosen() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let set = logit_expert(&line(), &[spec(0, 2)], 1.0, &mut rng).unwrap();
            assert_eq!(set.sequences[0].waypoints(), vec![0, 1, 2]);
        }
        assert!(logit_expert(&line(), &[spec(0, 2)], 0.0, &mut rng).is_err());
    }
}
