//! Demonstration generation: expert providers produce an instruction set,
//! which is validated, compiled to edge-slot actions and executed in the
//! environment to obtain expert trajectories.

pub mod execute;
pub mod experts;
pub mod instructions;
pub mod llm;
pub mod prompt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{AgentSpec, EnvError};
use crate::graph::{JunctionId, RoadGraph};

pub use execute::{execute_demos, DemoExecution, InvalidRouteFallback};
pub use experts::{logit_expert, oracle_expert};
pub use instructions::{
    compile_to_actions, parse_instructions, parse_lenient, validate_route, validity_rate, AgentSequence, Command,
    ExecutableSet, Instruction,
};
pub use llm::{ChatEndpoint, Completion, EndpointConfig, LlmError, ScriptedModel, TextModel};
pub use prompt::{build_prompt, refine_prompt, AgentFeedback, PromptState};

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("no mapping could be extracted from model output: {0:?}")]
    Unextractable(String),
    #[error("unknown agent id {0:?}")]
    UnknownAgent(String),
    #[error("agent {agent}: unknown junction {fragment}")]
    UnknownJunction { agent: usize, fragment: String },
    #[error("agent {agent}: route {route:?} is not executable")]
    InvalidRoute { agent: usize, route: Vec<JunctionId> },
    #[error("agent {agent}: destination unreachable")]
    NoRoute { agent: usize },
    #[error("agent {agent}: instruction sequence ended before arrival")]
    RouteExhausted { agent: usize },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("provider failed: {0}")]
    Provider(#[from] LlmError),
    #[error("no expert provider configured")]
    NoProvider,
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Where expert instruction sets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Llm,
    Oracle,
    Logit,
    None,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm" => Ok(Self::Llm),
            "oracle" => Ok(Self::Oracle),
            "logit" => Ok(Self::Logit),
            "none" => Ok(Self::None),
            other => Err(format!("unknown provider {other:?}")),
        }
    }
}

/// Summary of one demonstration-quality measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoQualityRecord {
    pub phase: usize,
    pub token_count: f64,
    pub validity_rate: f64,
    pub mean_reward: f64,
    pub mean_dtw: f64,
}

/// One generated instruction set plus its bookkeeping.
#[derive(Debug, Clone)]
pub struct Generated {
    pub set: ExecutableSet,
    pub tokens: usize,
    /// Raw model text, when a text model produced the set.
    pub raw: Option<String>,
    pub parse_errors: Vec<String>,
    /// The primary provider failed and the fallback produced the set.
    pub used_fallback: bool,
}

/// Expert provider with an optional offline fallback for when the text
/// model fails.
pub struct ExpertProvider {
    kind: ProviderKind,
    model: Option<Box<dyn TextModel>>,
    fallback: Option<ProviderKind>,
    logit_temperature: f64,
}

impl ExpertProvider {
    pub fn oracle() -> Self {
        Self::offline(ProviderKind::Oracle, 1.0)
    }

    pub fn logit(temperature: f64) -> Self {
        Self::offline(ProviderKind::Logit, temperature)
    }

    pub fn none() -> Self {
        Self::offline(ProviderKind::None, 1.0)
    }

    fn offline(kind: ProviderKind, logit_temperature: f64) -> Self {
        Self {
            kind,
            model: None,
            fallback: None,
            logit_temperature,
        }
    }

    /// Text-model provider; `fallback` (oracle or logit) takes over when the
    /// model call fails.
    pub fn text_model(model: Box<dyn TextModel>, fallback: Option<ProviderKind>, logit_temperature: f64) -> Self {
        Self {
            kind: ProviderKind::Llm,
            model: Some(model),
            fallback,
            logit_temperature,
        }
    }

    pub fn kind(&self) -> ProviderKind {
        self.kind
    }

    fn offline_set<R: Rng>(
        kind: ProviderKind,
        temperature: f64,
        graph: &RoadGraph,
        specs: &[AgentSpec],
        rng: &mut R,
    ) -> Result<ExecutableSet, DemoError> {
        match kind {
            ProviderKind::Oracle => oracle_expert(graph, specs),
            ProviderKind::Logit => logit_expert(graph, specs, temperature, rng),
            ProviderKind::Llm | ProviderKind::None => Err(DemoError::NoProvider),
        }
    }

    /// Sample an instruction set for the current prompt.
    pub fn generate<R: Rng>(
        &mut self,
        prompt: &PromptState,
        graph: &RoadGraph,
        specs: &[AgentSpec],
        rng: &mut R,
    ) -> Result<Generated, DemoError> {
        let Some(model) = self.model.as_mut() else {
            let set = Self::offline_set(self.kind, self.logit_temperature, graph, specs, rng)?;
            return Ok(Generated {
                set,
                tokens: 0,
                raw: None,
                parse_errors: Vec::new(),
                used_fallback: false,
            });
        };
        let text = build_prompt(prompt);
        match model.complete(&text) {
            Ok(c) => {
                let (set, errors) = parse_lenient(&c.text, specs.len(), graph);
                Ok(Generated {
                    set,
                    tokens: c.tokens,
                    raw: Some(c.text),
                    parse_errors: errors.iter().map(|e| e.to_string()).collect(),
                    used_fallback: false,
                })
            }
            Err(e) => {
                let Some(fallback) = self.fallback else {
                    return Err(e.into());
                };
                log::warn!("text model failed ({e}); using {fallback:?} fallback");
                let set = Self::offline_set(fallback, self.logit_temperature, graph, specs, rng)?;
                Ok(Generated {
                    set,
                    tokens: 0,
                    raw: None,
                    parse_errors: vec![e.to_string()],
                    used_fallback: true,
                })
            }
        }
    }
}
