//! Step three agents along their shortest routes on the hilly fixture and
//! print the per-step rewards.

use std::sync::Arc;

use leed::env::{AgentSpec, RewardParams, RoadEnv};
use leed::graph::hilly;

fn main() -> anyhow::Result<()> {
    let graph = Arc::new(hilly());
    let specs = vec![
        AgentSpec { agent_id: 0, start: 0, dest: 12, depart_time: 0 },
        AgentSpec { agent_id: 1, start: 8, dest: 3, depart_time: 1 },
        AgentSpec { agent_id: 2, start: 2, dest: 9, depart_time: 2 },
    ];
    let routes: Vec<Vec<usize>> = specs
        .iter()
        .map(|s| graph.shortest_path(s.start, s.dest).map(|r| r.path))
        .collect::<Option<_>>()
        .ok_or_else(|| anyhow::anyhow!("unreachable destination"))?;
    for (s, r) in specs.iter().zip(&routes) {
        println!("agent {}: {:?}", s.agent_id, r);
    }

    let mut env = RoadEnv::new(graph.clone(), specs, RewardParams::default(), 200)?;
    env.reset(0);
    let mut hop = vec![0usize; routes.len()];
    while !env.episode_done() {
        let actions: Vec<usize> = (0..routes.len())
            .map(|a| {
                if !env.is_active(a) {
                    return 0;
                }
                let at = env.state().position[a];
                let next = routes[a][hop[a] + 1];
                hop[a] += 1;
                graph.slot_of(at, next).expect("route follows edges")
            })
            .collect();
        let step = env.step(&actions)?;
        let r: Vec<String> = step.rewards.iter().map(|r| format!("{r:+.3}")).collect();
        println!("t={:<3} rewards [{}]", env.state().step, r.join(", "));
    }
    println!("returns {:?}", env.state().cumulative_reward);
    Ok(())
}
