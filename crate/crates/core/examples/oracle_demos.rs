//! Oracle and logit expert demonstrations executed in the environment.

use std::sync::Arc;

use leed::demo::{execute_demos, logit_expert, oracle_expert, InvalidRouteFallback};
use leed::env::{RewardParams, RoadEnv};
use leed::graph::hilly;
use leed::trainer::generate_specs;
use rand::SeedableRng;

fn main() -> anyhow::Result<()> {
    let graph = Arc::new(hilly());
    let specs = generate_specs(&graph, 4, 3, 0);
    let mut env = RoadEnv::new(graph.clone(), specs.clone(), RewardParams::default(), 200)?;

    let oracle = oracle_expert(&graph, &specs)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let logit = logit_expert(&graph, &specs, 1.0, &mut rng)?;
    for (name, set) in [("oracle", oracle), ("logit", logit)] {
        let exec = execute_demos(&mut env, &set, InvalidRouteFallback::SkipAgent, 0, |_, _, _| 0.0)?;
        println!("{name}:");
        for (spec, t) in specs.iter().zip(&exec.trajectories) {
            let t = t.as_ref().expect("generated routes are valid");
            println!("  agent {} {:?} return {:.3}", spec.agent_id, t.junction_path, t.total_reward());
        }
    }
    Ok(())
}
