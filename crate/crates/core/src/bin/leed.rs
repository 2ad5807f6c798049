use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use leed::demo::ProviderKind;
use leed::harness::{self, HarnessError, LlmSource};
use leed::rng::child_seed;
use leed::trainer::{Mode, TrainConfig};

#[derive(Parser)]
#[command(name = "leed", version, about = "Decentralized PPO routing with DTW-weighted expert demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; fields left out take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph file (overrides `graph` in the config).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// leed, ippo, fixed-alpha:<value> or logit-ppo.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    provider: Option<ProviderKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path override, e.g. `--set reward.shaping=0.5`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Serve the llm provider from numbered .txt responses in this directory.
    #[arg(long)]
    llm_script: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Args)]
struct Seeds {
    /// Explicit seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Otherwise derive this many child seeds from the master seed.
    #[arg(long, default_value_t = 5)]
    n_seeds: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run.
    Train(Common),
    /// Evaluate saved checkpoints without learning.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/checkpoints/final.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        /// Sample actions instead of taking the most likely one.
        #[arg(long)]
        sampled: bool,
    },
    /// Train and evaluate for several agent counts.
    SweepAgents {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 15, 20])]
        counts: Vec<usize>,
        #[command(flatten)]
        seeds: Seeds,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
    },
    /// Compare LEED, fixed-α, Logit-PPO and IPPO on the same seeds.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeds: Seeds,
        /// Subset of variants, comma separated.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Measure demonstration quality across prompt refinements.
    DemoReport {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        phases: usize,
        #[arg(long, default_value_t = 10)]
        prompts: usize,
    },
    /// Smooth and aggregate metrics CSVs across seeds.
    PlotData {
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        window: usize,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn config(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(p) => harness::load_config(p)?,
            None => TrainConfig::default(),
        };
        if let Some(g) = &self.graph {
            config.graph = Some(g.clone());
        }
        if let Some(m) = self.mode {
            config.mode = m;
            if m == Mode::Ippo && self.provider.is_none() {
                config.provider = ProviderKind::None;
            }
        }
        if let Some(p) = self.provider {
            config.provider = p;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        let config = harness::apply_overrides(config, self.overrides.iter().map(String::as_str))?;
        config.validate()?;
        Ok(config)
    }

    fn llm(&self) -> LlmSource {
        match &self.llm_script {
            Some(dir) => LlmSource::Scripted(dir.clone()),
            None => LlmSource::Endpoint,
        }
    }
}

impl Seeds {
    fn resolve(&self, master: u64) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.n_seeds).map(|i| child_seed(master, i)).collect()
        } else {
            self.seeds.clone()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let config = common.config()?;
            let (graph, hash) = harness::load_config_graph(&config)?;
            let metrics = harness::run_train(&config, graph, &hash, &common.llm(), &common.out)?;
            if let Some(last) = metrics.last() {
                println!(
                    "trained {} epochs; final mean reward {:.3}; artifacts in {}",
                    last.epoch,
                    last.mean_reward_a,
                    common.out.display()
                );
            }
        }
        Command::Evaluate { common, checkpoints, episodes, sampled } => {
            let config = common.config()?;
            let (graph, _) = harness::load_config_graph(&config)?;
            let dir = checkpoints.unwrap_or_else(|| common.out.join("checkpoints").join("final"));
            let report = harness::run_evaluate(&config, graph, &dir, episodes, !sampled)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::SweepAgents { common, counts, seeds, episodes } => {
            let config = common.config()?;
            let (graph, hash) = harness::load_config_graph(&config)?;
            let seeds = seeds.resolve(config.seed);
            harness::RunManifest::new(&config, &hash, seeds.clone(), &common.out).write(&common.out)?;
            let rows = harness::sweep_agents(&config, &graph, &counts, &seeds, episodes, &common.llm(), Some(&common.out))?;
            for r in rows {
                println!("{:>3} agents: {:8.3} ± {:.3}  ({:.3}s/epoch)", r.agents, r.mean, r.std, r.seconds_per_epoch);
            }
        }
        Command::Ablation { common, seeds, variants } => {
            let config = common.config()?;
            let (graph, hash) = harness::load_config_graph(&config)?;
            let seeds = seeds.resolve(config.seed);
            harness::RunManifest::new(&config, &hash, seeds.clone(), &common.out).write(&common.out)?;
            let chosen: Vec<&str> = variants.iter().map(String::as_str).collect();
            let subset = (!chosen.is_empty()).then_some(chosen.as_slice());
            let result = harness::ablation(&config, &graph, &seeds, subset, &common.llm(), Some(&common.out))?;
            println!("wrote {}", common.out.join("ablation.csv").display());
            for v in &result.variants {
                let mean = result.seed_mean(v).unwrap_or_default();
                let tail = &mean[mean.len().saturating_sub(100)..];
                println!("{v:>16}: last-100 mean reward {:.3}", tail.iter().sum::<f64>() / tail.len().max(1) as f64);
            }
        }
        Command::DemoReport { common, phases, prompts } => {
            let config = common.config()?;
            let (graph, hash) = harness::load_config_graph(&config)?;
            harness::RunManifest::new(&config, &hash, vec![config.seed], &common.out).write(&common.out)?;
            let records = harness::demo_report(&config, &graph, phases, prompts, &common.llm(), Some(&common.out))?;
            println!("phase  tokens  validity  reward     dtw");
            for r in records {
                println!(
                    "{:>5} {:>7.0} {:>8.1}% {:>7.3} {:>7.3}",
                    r.phase, r.token_count, r.validity_rate, r.mean_reward, r.mean_dtw
                );
            }
        }
        Command::PlotData { csvs, window, out } => {
            if window == 0 {
                bail!("--window must be at least 1");
            }
            let paths: Vec<&Path> = csvs.iter().map(PathBuf::as_path).collect();
            let text = harness::plot_data(&paths, window)?;
            match out {
                Some(p) => {
                    std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
                    println!("wrote {}", p.display());
                }
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<HarnessError>() {
                Some(HarnessError::MissingGraph(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
