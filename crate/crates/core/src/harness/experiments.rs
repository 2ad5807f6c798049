//! Multi-run experiments: agent-count sweeps, mode ablations and
//! demonstration-quality reports.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::{build_provider, HarnessError, LlmSource};
use crate::demo::prompt::{build_prompt, count_tokens};
use crate::demo::{execute_demos, DemoQualityRecord, InvalidRouteFallback, ProviderKind};
use crate::dtw::dtw_distance;
use crate::graph::RoadGraph;
use crate::rng::{self, Stream};
use crate::trainer::{evaluate_policies, mean_std, rollout, EpochMetrics, Mode, TrainConfig, Trainer};
use crate::trajectory::to_feature_seq;

/// Ablation variants in CSV column order.
pub const VARIANTS: [&str; 5] = ["leed", "fixed_alpha_0.2", "fixed_alpha_0.5", "logit_ppo", "ippo"];

/// Config for one ablation variant derived from a base config.
pub fn variant_config(base: &TrainConfig, variant: &str) -> Result<TrainConfig, HarnessError> {
    let expert = match base.provider {
        ProviderKind::None => ProviderKind::Oracle,
        p => p,
    };
    let (mode, provider) = match variant {
        "leed" => (Mode::Leed, expert),
        "fixed_alpha_0.2" => (Mode::FixedAlpha(0.2), expert),
        "fixed_alpha_0.5" => (Mode::FixedAlpha(0.5), expert),
        "logit_ppo" => (Mode::LogitPpo, ProviderKind::Logit),
        "ippo" => (Mode::Ippo, ProviderKind::None),
        other => return Err(HarnessError::Config(format!("unknown variant {other:?}; expected one of {VARIANTS:?}"))),
    };
    Ok(TrainConfig { mode, provider, ..base.clone() })
}

fn train_one(
    config: &TrainConfig,
    graph: &Arc<RoadGraph>,
    llm: &LlmSource,
    out: Option<&Path>,
) -> Result<(Trainer, Vec<EpochMetrics>), HarnessError> {
    let provider = build_provider(config, llm)?;
    let mut trainer = Trainer::new(config.clone(), graph.clone(), provider)?;
    let metrics = trainer.train(out)?;
    Ok((trainer, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub agents: usize,
    /// Over all seeds × evaluation episodes.
    pub mean: f64,
    pub std: f64,
    /// Mean training wall time per epoch.
    pub seconds_per_epoch: f64,
}

/// Train and evaluate once per (agent count, seed). Duplicate counts are
/// dropped with a warning.
pub fn sweep_agents(
    base: &TrainConfig,
    graph: &Arc<RoadGraph>,
    counts: &[usize],
    seeds: &[u64],
    episodes: usize,
    llm: &LlmSource,
    out: Option<&Path>,
) -> Result<Vec<SweepRow>, HarnessError> {
    if counts.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one agent count and one seed".into()));
    }
    let mut unique = Vec::new();
    for &c in counts {
        if unique.contains(&c) {
            log::warn!("duplicate agent count {c} ignored");
        } else {
            unique.push(c);
        }
    }
    let mut rows = Vec::new();
    for count in unique {
        let mut returns = Vec::new();
        let mut seconds = Vec::new();
        for &seed in seeds {
            let config = TrainConfig {
                n_agents: count,
                agents: None,
                seed,
                ..base.clone()
            };
            let dir = out.map(|o| o.join(format!("agents_{count}")).join(format!("seed_{seed}")));
            let (mut trainer, metrics) = train_one(&config, graph, llm, dir.as_deref())?;
            seconds.extend(metrics.iter().map(|m| m.seconds));
            let policies: Vec<_> = trainer.learners().iter().map(|l| l.policy.clone()).collect();
            let report = evaluate_policies(&policies, trainer.env_mut(), episodes, true, seed)?;
            returns.extend(report.episode_means);
        }
        let (mean, std) = mean_std(&returns);
        let row = SweepRow {
            agents: count,
            mean,
            std,
            seconds_per_epoch: mean_std(&seconds).0,
        };
        log::info!("{} agents: {:.3} ± {:.3}, {:.3}s/epoch", row.agents, row.mean, row.std, row.seconds_per_epoch);
        rows.push(row);
    }
    if let Some(out) = out {
        write_rows(&out.join("sweep_agents.csv"), &rows)?;
    }
    Ok(rows)
}

/// Per-epoch mean rewards of every (variant, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    /// `rewards[variant][seed][epoch]`
    pub rewards: Vec<Vec<Vec<f64>>>,
}

impl AblationResult {
    pub fn runs(&self, variant: &str) -> Option<&[Vec<f64>]> {
        let i = self.variants.iter().position(|v| v == variant)?;
        Some(&self.rewards[i])
    }

    /// Per-epoch mean over seeds for one variant.
    pub fn seed_mean(&self, variant: &str) -> Option<Vec<f64>> {
        let runs = self.runs(variant)?;
        let epochs = runs.iter().map(Vec::len).min().unwrap_or(0);
        Some(
            (0..epochs)
                .map(|e| runs.iter().map(|r| r[e]).sum::<f64>() / runs.len() as f64)
                .collect(),
        )
    }

    /// `epoch,<variant>...` with seed-averaged rewards.
    pub fn to_csv(&self) -> String {
        let means: Vec<Vec<f64>> = self
            .variants
            .iter()
            .map(|v| self.seed_mean(v).unwrap_or_default())
            .collect();
        let epochs = means.iter().map(Vec::len).min().unwrap_or(0);
        let mut s = format!("epoch,{}\n", self.variants.join(","));
        for e in 0..epochs {
            let cells: Vec<String> = means.iter().map(|m| m[e].to_string()).collect();
            s.push_str(&format!("{},{}\n", e + 1, cells.join(",")));
        }
        s
    }
}

/// Run each variant on the same seeds. `variants` defaults to [`VARIANTS`].
pub fn ablation(
    base: &TrainConfig,
    graph: &Arc<RoadGraph>,
    seeds: &[u64],
    variants: Option<&[&str]>,
    llm: &LlmSource,
    out: Option<&Path>,
) -> Result<AblationResult, HarnessError> {
    let variants: Vec<&str> = variants.map(<[&str]>::to_vec).unwrap_or_else(|| VARIANTS.to_vec());
    let mut rewards = Vec::new();
    for &variant in &variants {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let config = TrainConfig {
                seed,
                ..variant_config(base, variant)?
            };
            let dir = out.map(|o| o.join(variant).join(format!("seed_{seed}")));
            let (_, metrics) = train_one(&config, graph, llm, dir.as_deref())?;
            per_seed.push(metrics.iter().map(|m| m.mean_reward_a).collect());
        }
        rewards.push(per_seed);
    }
    let result = AblationResult {
        variants: variants.iter().map(|v| v.to_string()).collect(),
        seeds: seeds.to_vec(),
        rewards,
    };
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        fs::write(out.join("ablation.csv"), result.to_csv())?;
    }
    Ok(result)
}

/// Demonstration quality across refinement phases.
///
/// Phase `p` covers the epochs during which the prompt carries `p`
/// refinement records; it is measured at the end of that window, just
/// before the next refinement, so the policy rollouts reflect training on
/// that phase's demonstrations. Each phase asks the provider for
/// `prompts_per_phase` instruction sets; validity counts every agent of
/// every set, while reward and DTW average the valid demonstrations only.
/// Each set is compared with its own fresh rollout of the current policies.
pub fn demo_report(
    base: &TrainConfig,
    graph: &Arc<RoadGraph>,
    phases: usize,
    prompts_per_phase: usize,
    llm: &LlmSource,
    out: Option<&Path>,
) -> Result<Vec<DemoQualityRecord>, HarnessError> {
    if base.mode == Mode::Ippo || base.provider == ProviderKind::None {
        return Err(HarnessError::Config("demo-report needs an expert mode and provider".into()));
    }
    let provider = build_provider(base, llm)?;
    let mut trainer = Trainer::new(base.clone(), graph.clone(), provider)?;
    let mut records = Vec::with_capacity(phases);
    for phase in 0..phases {
        while trainer.prompt().records().len() < phase
            || (phase > 0 && !trainer.is_regeneration_epoch(trainer.epoch() + 1))
        {
            if trainer.epoch() >= base.epochs {
                return Err(HarnessError::Config(format!(
                    "phase {phase} needs more than the configured {} epochs",
                    base.epochs
                )));
            }
            trainer.run_epoch()?;
        }
        let eval_seed = rng::split(base.seed, Stream::Evaluate, phase as u64);
        let learners = trainer.learners().to_vec();
        let prompt_tokens = count_tokens(&build_prompt(trainer.prompt()));

        let mut tokens = Vec::new();
        let mut valid = Vec::new();
        let mut rewards = Vec::new();
        let mut dtws = Vec::new();
        for j in 0..prompts_per_phase {
            let routes = rollout(&learners, trainer.env_mut(), rng::split(eval_seed, Stream::Rollout, j as u64))?;
            let mut rng = rng::stream(eval_seed, Stream::Expert, j as u64);
            let generated = trainer.generate_demos(&mut rng)?;
            tokens.push(if generated.tokens > 0 { generated.tokens } else { prompt_tokens } as f64);
            let exec = execute_demos(
                trainer.env_mut(),
                &generated.set,
                InvalidRouteFallback::SkipAgent,
                eval_seed,
                |_, _, _| 0.0,
            )
            .map_err(crate::trainer::TrainError::from)?;
            valid.extend_from_slice(&exec.valid);
            for (agent, traj) in exec.trajectories.iter().enumerate() {
                let Some(demo) = traj else { continue };
                rewards.push(demo.total_reward());
                let a = to_feature_seq(&routes[agent], graph).map_err(|e| HarnessError::Config(e.to_string()))?;
                let b = to_feature_seq(demo, graph).map_err(|e| HarnessError::Config(e.to_string()))?;
                dtws.push(dtw_distance(&a, &b).map_err(|e| HarnessError::Config(e.to_string()))?);
            }
        }
        let record = DemoQualityRecord {
            phase,
            token_count: mean_std(&tokens).0,
            validity_rate: crate::demo::validity_rate(&valid),
            mean_reward: mean_std(&rewards).0,
            mean_dtw: mean_std(&dtws).0,
        };
        log::info!(
            "phase {phase}: tokens {:.0} validity {:.1}% reward {:.3} dtw {:.3}",
            record.token_count,
            record.validity_rate,
            record.mean_reward,
            record.mean_dtw
        );
        records.push(record);
    }
    if let Some(out) = out {
        write_rows(&out.join("demo_report.csv"), &records)?;
    }
    Ok(records)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
