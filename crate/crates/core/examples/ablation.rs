//! Short ablation on a 4×4 grid: every variant, two seeds.

use std::sync::Arc;

use leed::env::AgentSpec;
use leed::graph::grid;
use leed::harness::{ablation, LlmSource};
use leed::trainer::TrainConfig;

fn main() -> anyhow::Result<()> {
    let graph = Arc::new(grid(4, 1.0));
    let base = TrainConfig {
        agents: Some(vec![
            AgentSpec { agent_id: 0, start: 0, dest: 15, depart_time: 0 },
            AgentSpec { agent_id: 1, start: 3, dest: 12, depart_time: 0 },
        ]),
        epochs: 40,
        wall_clock: false,
        ..Default::default()
    };
    let result = ablation(&base, &graph, &[0, 1], None, &LlmSource::Endpoint, None)?;
    for v in &result.variants {
        let curve = result.seed_mean(v).expect("variant ran");
        let tail = &curve[curve.len() - 10..];
        println!("{v:>16}: last-10 mean reward {:.3}", tail.iter().sum::<f64>() / 10.0);
    }
    Ok(())
}
