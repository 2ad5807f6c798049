//! Demonstration quality over three refinement phases, served by the
//! scripted mock in `fixtures/mock_improving`.

use std::path::PathBuf;

use leed::harness::{demo_report, load_config, load_config_graph, LlmSource};

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let mut config = load_config(&root.join("fixtures/configs/grid5_llm_mock.json"))?;
    config.graph = Some(root.join("fixtures/grid5.json"));
    let (graph, _) = load_config_graph(&config)?;
    let llm = LlmSource::Scripted(root.join("fixtures/mock_improving"));
    let records = demo_report(&config, &graph, 3, 10, &llm, None)?;
    println!("phase  tokens  validity  reward     dtw");
    for r in records {
        println!(
            "{:>5} {:>7.0} {:>8.1}% {:>7.3} {:>7.3}",
            r.phase, r.token_count, r.validity_rate, r.mean_reward, r.mean_dtw
        );
    }
    Ok(())
}
