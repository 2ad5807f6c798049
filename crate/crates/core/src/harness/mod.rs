//! Experiment orchestration behind the `leed` command: configuration,
//! run manifests, agent-count sweeps, ablations, demonstration-quality
//! reports and plot-ready aggregation.

pub mod config;
pub mod experiments;
pub mod plot;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::demo::{ChatEndpoint, EndpointConfig, ExpertProvider, ProviderKind, ScriptedModel};
use crate::graph::{load_graph, GraphError, RoadGraph};
use crate::trainer::{hex, EpochMetrics, EvalReport, TrainConfig, TrainError, Trainer};

pub use config::{apply_override, apply_overrides, load_config, parse_config};
pub use experiments::{ablation, demo_report, sweep_agents, AblationResult, SweepRow, VARIANTS};
pub use plot::{moving_average, plot_data};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("graph file not found: {}", .0.display())]
    MissingGraph(PathBuf),
    #[error("no graph configured; set `graph` in the config or pass --graph")]
    NoGraph,
    #[error("{path}: {source}")]
    Graph { path: String, source: GraphError },
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("csv: {0}")]
    Csv(String),
    #[error("provider: {0}")]
    Provider(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Csv(e.to_string())
    }
}

/// Load the graph named by `config.graph`, returning it with the SHA-256 of
/// the file bytes.
pub fn load_config_graph(config: &TrainConfig) -> Result<(Arc<RoadGraph>, String), HarnessError> {
    let path = config.graph.as_ref().ok_or(HarnessError::NoGraph)?;
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => HarnessError::MissingGraph(path.clone()),
        _ => HarnessError::Io(format!("{}: {e}", path.display())),
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let graph = load_graph(&text).map_err(|source| HarnessError::Graph {
        path: path.display().to_string(),
        source,
    })?;
    Ok((Arc::new(graph), hex(&Sha256::digest(&bytes))))
}

/// Where the `llm` provider gets its text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LlmSource {
    /// Chat-completion endpoint from the `LEED_LLM_*` environment variables.
    #[default]
    Endpoint,
    /// Scripted responses from a directory of numbered `.txt` files.
    Scripted(PathBuf),
}

/// Build the provider a config asks for.
pub fn build_provider(config: &TrainConfig, llm: &LlmSource) -> Result<ExpertProvider, HarnessError> {
    Ok(match config.provider {
        ProviderKind::Oracle => ExpertProvider::oracle(),
        ProviderKind::Logit => ExpertProvider::logit(config.logit_temperature),
        ProviderKind::None => ExpertProvider::none(),
        ProviderKind::Llm => {
            let model: Box<dyn crate::demo::TextModel> = match llm {
                LlmSource::Scripted(dir) => {
                    Box::new(ScriptedModel::from_dir(dir).map_err(|e| HarnessError::Provider(e.to_string()))?)
                }
                LlmSource::Endpoint => Box::new(ChatEndpoint::new(
                    EndpointConfig::from_env().map_err(|e| HarnessError::Provider(e.to_string()))?,
                )),
            };
            ExpertProvider::text_model(model, config.provider_fallback, config.logit_temperature)
        }
    })
}

/// Record of what a run was started with. Written once, before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub config_hash: String,
    pub graph_hash: String,
    pub build: String,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

impl RunManifest {
    pub fn new(config: &TrainConfig, graph_hash: &str, seeds: Vec<u64>, out_dir: &Path) -> Self {
        Self {
            config: config.clone(),
            config_hash: config.hash(),
            graph_hash: graph_hash.to_string(),
            build: build_id(),
            seeds,
            out_dir: out_dir.to_path_buf(),
        }
    }

    /// Write to `dir`, refusing to replace an existing manifest.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(RUN_MANIFEST_FILE);
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        f.write_all(serde_json::to_string_pretty(self).expect("manifest serializes").as_bytes())?;
        Ok(())
    }
}

/// Crate version plus `LEED_BUILD_ID` when set at compile time.
pub fn build_id() -> String {
    match option_env!("LEED_BUILD_ID") {
        Some(id) => format!("leed {} ({id})", env!("CARGO_PKG_VERSION")),
        None => format!("leed {}", env!("CARGO_PKG_VERSION")),
    }
}

/// Train one run into `out`: manifest, metrics CSV and checkpoints.
pub fn run_train(
    config: &TrainConfig,
    graph: Arc<RoadGraph>,
    graph_hash: &str,
    llm: &LlmSource,
    out: &Path,
) -> Result<Vec<EpochMetrics>, HarnessError> {
    config.validate()?;
    RunManifest::new(config, graph_hash, vec![config.seed], out).write(out)?;
    let provider = build_provider(config, llm)?;
    let mut trainer = Trainer::new(config.clone(), graph, provider)?;
    Ok(trainer.train(Some(out))?)
}

/// Greedy (or sampled) evaluation of checkpoints written for `config`.
pub fn run_evaluate(
    config: &TrainConfig,
    graph: Arc<RoadGraph>,
    checkpoints: &Path,
    episodes: usize,
    greedy: bool,
) -> Result<EvalReport, HarnessError> {
    Ok(crate::trainer::evaluate(checkpoints, config, graph, episodes, greedy)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_graph_names_path() {
        let config = TrainConfig {
            graph: Some("/nonexistent/g.json".into()),
            ..Default::default()
        };
        let err = load_config_graph(&config).unwrap_err();
        assert!(matches!(err, HarnessError::MissingGraph(_)));
        assert!(err.to_string().contains("/nonexistent/g.json"));
    }

    #[test]
    fn manifest_is_write_once() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(&TrainConfig::default(), "abc", vec![1], dir.path());
        m.write(dir.path()).unwrap();
        assert!(m.write(dir.path()).is_err());
        let text = fs::read_to_string(dir.path().join(RUN_MANIFEST_FILE)).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config_hash, TrainConfig::default().hash());
    }
}
