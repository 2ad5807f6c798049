//! Per-epoch cost as the number of agents grows.

use std::sync::Arc;

use leed::graph::grid;
use leed::harness::{sweep_agents, LlmSource};
use leed::trainer::TrainConfig;

fn main() -> anyhow::Result<()> {
    let graph = Arc::new(grid(5, 1.0));
    let base = TrainConfig { epochs: 5, ..Default::default() };
    let rows = sweep_agents(&base, &graph, &[5, 10, 15, 20], &[0], 5, &LlmSource::Endpoint, None)?;
    for r in rows {
        println!("{:>2} agents  greedy return {:7.3}  {:.4}s/epoch", r.agents, r.mean, r.seconds_per_epoch);
    }
    Ok(())
}
