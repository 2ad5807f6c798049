//! Train LEED with oracle demonstrations on the grid, then evaluate the
//! greedy policies.

use std::sync::Arc;

use leed::demo::ExpertProvider;
use leed::env::AgentSpec;
use leed::graph::grid;
use leed::trainer::{evaluate_policies, oracle_return, TrainConfig, Trainer};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let epochs = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(60);
    let graph = Arc::new(grid(5, 1.0));
    let config = TrainConfig {
        agents: Some(vec![
            AgentSpec { agent_id: 0, start: 0, dest: 24, depart_time: 0 },
            AgentSpec { agent_id: 1, start: 4, dest: 20, depart_time: 0 },
            AgentSpec { agent_id: 2, start: 24, dest: 0, depart_time: 0 },
        ]),
        epochs,
        ..Default::default()
    };
    let mut trainer = Trainer::new(config, graph, ExpertProvider::oracle())?;
    for _ in 0..epochs {
        let m = trainer.run_epoch()?;
        if m.epoch % 10 == 0 || m.regenerated {
            println!(
                "epoch {:>3}  reward {:7.3}  α {:.3}  dtw {:6.3}{}",
                m.epoch,
                m.mean_reward_a,
                m.alpha_mean,
                m.dtw_mean,
                if m.regenerated { "  (new demos)" } else { "" }
            );
        }
    }
    let policies: Vec<_> = trainer.learners().iter().map(|l| l.policy.clone()).collect();
    let env = trainer.env_mut();
    let best = oracle_return(env)?;
    let report = evaluate_policies(&policies, env, 5, true, 0)?;
    println!("greedy return {:.3} (shortest-path routing {best:.3})", report.mean);
    Ok(())
}
