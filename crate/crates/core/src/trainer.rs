//! Decentralized training loop.
//!
//! Each epoch every agent rolls out its own policy; every `q` epochs (and at
//! the first) fresh expert demonstrations are generated and executed. Each
//! agent then updates its agent-value and expert-value networks on their own
//! returns and its policy on the α-weighted mix of the two clipped
//! surrogates plus an entropy bonus. Agents share no parameters and see no
//! other agent's data.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::demo::execute::{execute_demos, InvalidRouteFallback};
use crate::demo::prompt::{refine_prompt, AgentFeedback, PromptState};
use crate::demo::{validity_rate, DemoError, ExpertProvider, Generated, ProviderKind};
#[cfg(feature = "experts")]
use crate::dtw::dtw_distance;
use crate::env::{check_specs, AgentSpec, EnvError, RewardParams, RoadEnv};
use crate::graph::RoadGraph;
use crate::nn::{adam_step, policy_forward, AdamState, ForwardCache, MlpParams, NnError, PolicyOutput};
use crate::ppo::{self, PpoError};
use crate::rng::{self, Stream};
#[cfg(feature = "experts")]
use crate::trajectory::to_feature_seq;
use crate::trajectory::{Source, Trajectory, Transition};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error("non-finite {what} for agent {agent} at epoch {epoch}")]
    NonFinite { what: String, agent: usize, epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// How the agent and expert surrogates are mixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    /// α from DTW between the agent's and expert's trajectories.
    Leed,
    /// Agent surrogate only (α ≡ 1).
    Ippo,
    /// Constant α.
    FixedAlpha(f64),
    /// Dynamic α over Logit-sampled demonstrations.
    LogitPpo,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "leed" => Ok(Mode::Leed),
            "ippo" => Ok(Mode::Ippo),
            "logit-ppo" => Ok(Mode::LogitPpo),
            other => {
                let value = other
                    .strip_prefix("fixed-alpha:")
                    .ok_or_else(|| format!("unknown mode {other:?}"))?;
                let alpha: f64 = value.parse().map_err(|_| format!("bad alpha in {other:?}"))?;
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(format!("fixed alpha must be in (0, 1], got {alpha}"));
                }
                Ok(Mode::FixedAlpha(alpha))
            }
        }
    }
}

impl TryFrom<String> for Mode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> String {
        m.to_string()
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Leed => f.write_str("leed"),
            Mode::Ippo => f.write_str("ippo"),
            Mode::FixedAlpha(a) => write!(f, "fixed-alpha:{a}"),
            Mode::LogitPpo => f.write_str("logit-ppo"),
        }
    }
}

/// How a batch's advantages are normalized before entering the surrogate.
///
/// Agent batches are standardized on their own unless the scheme is
/// [`AdvantageNorm::Joint`], the default, which pools both sources.
/// Standardizing a single demonstration on its own turns its later,
/// lower-return steps into negative advantages and pushes the policy away
/// from the expert's final moves; pooling plus the non-negative floor
/// (`expert_advantage_nonnegative`) avoids that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageNorm {
    /// Subtract the batch mean and divide by the batch std.
    Standardize,
    /// Standardize agent and expert advantages together, as one pool.
    Joint,
    /// Divide by the std of the batch returns; no centering.
    ScaleByReturns,
    /// Divide by the std of the same agent's raw rollout advantages, so
    /// both surrogates are in the same units; no centering.
    ScaleByAgent,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Path of the graph file (used by the command-line harness).
    pub graph: Option<PathBuf>,
    pub n_agents: usize,
    /// Explicit agents; when absent, `n_agents` are drawn from the seed.
    pub agents: Option<Vec<AgentSpec>>,
    /// Latest departure step for drawn agents.
    pub max_depart: usize,
    /// K
    pub epochs: usize,
    pub steps_per_episode: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub lr: f64,
    /// q: epochs between demonstration regenerations.
    pub sample_interval: usize,
    pub update_epochs: usize,
    pub provider: ProviderKind,
    /// Offline provider used when the text model fails.
    pub provider_fallback: Option<ProviderKind>,
    pub route_fallback: InvalidRouteFallback,
    pub logit_temperature: f64,
    /// Normalization of expert-batch advantages before the surrogate.
    pub expert_advantage: AdvantageNorm,
    /// Floor expert advantages at zero: demonstrated actions are only ever
    /// reinforced, never pushed down by value-estimation error.
    pub expert_advantage_nonnegative: bool,
    pub mode: Mode,
    pub seed: u64,
    pub reward: RewardParams,
    /// Write checkpoints every this many epochs (0: final only).
    pub checkpoint_every: usize,
    /// Record per-epoch wall time; disable for byte-reproducible metrics.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            graph: None,
            n_agents: 10,
            agents: None,
            max_depart: 0,
            epochs: 500,
            steps_per_episode: 200,
            gamma: 0.99,
            epsilon: 0.2,
            beta: 0.01,
            lr: 3e-4,
            sample_interval: 5,
            update_epochs: 4,
            provider: ProviderKind::Oracle,
            provider_fallback: Some(ProviderKind::Oracle),
            route_fallback: InvalidRouteFallback::OracleSubstitute,
            logit_temperature: 1.0,
            expert_advantage: AdvantageNorm::Joint,
            expert_advantage_nonnegative: true,
            mode: Mode::Leed,
            seed: 0,
            reward: RewardParams::default(),
            checkpoint_every: 0,
            wall_clock: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.sample_interval == 0 {
            return bad("sample_interval (q) must be at least 1");
        }
        if self.epochs == 0 || self.steps_per_episode == 0 || self.update_epochs == 0 {
            return bad("epochs, steps_per_episode and update_epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must be in (0, 1)");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must be in (0, 1]");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.agents.is_none() && self.n_agents == 0 {
            return bad("n_agents must be positive");
        }
        match (self.mode, self.provider) {
            (Mode::Ippo, _) => {}
            (_, ProviderKind::None) => return bad("expert modes need a provider other than none"),
            (Mode::LogitPpo, p) if p != ProviderKind::Logit => return bad("logit-ppo requires provider logit"),
            _ => {}
        }
        if cfg!(not(feature = "experts")) && self.mode != Mode::Ippo {
            return bad("built without the `experts` feature; only ippo mode is available");
        }
        Ok(())
    }

    pub fn uses_experts(&self) -> bool {
        self.mode != Mode::Ippo
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Draw `n` agents with reachable, distinct start and destination. Agent
/// `i` depends only on `(seed, i)`.
pub fn generate_specs(graph: &RoadGraph, n: usize, seed: u64, max_depart: usize) -> Vec<AgentSpec> {
    let nodes = graph.node_count();
    (0..n)
        .map(|i| {
            let mut rng = rng::stream(seed, Stream::Specs, i as u64);
            loop {
                let start = rng.gen_range(0..nodes);
                let dest = rng.gen_range(0..nodes);
                if start != dest && graph.distance(start, dest).is_finite() {
                    let depart_time = if max_depart > 0 { rng.gen_range(0..=max_depart) } else { 0 };
                    break AgentSpec { agent_id: i, start, dest, depart_time };
                }
            }
        })
        .collect()
}

/// The specs a config resolves to on `graph`.
pub fn resolve_specs(config: &TrainConfig, graph: &RoadGraph) -> Result<Vec<AgentSpec>, TrainError> {
    let specs = match &config.agents {
        Some(a) => a.clone(),
        None => generate_specs(graph, config.n_agents, config.seed, config.max_depart),
    };
    check_specs(graph, &specs)?;
    Ok(specs)
}

/// One agent's networks, optimizer states and latest trajectories.
#[derive(Debug, Clone)]
pub struct AgentLearner {
    pub agent_id: usize,
    pub policy: MlpParams,
    pub value_agent: MlpParams,
    pub value_expert: MlpParams,
    pub opt_policy: AdamState,
    pub opt_value_agent: AdamState,
    pub opt_value_expert: AdamState,
    pub expert: Option<Arc<Trajectory>>,
    pub last_agent: Option<Arc<Trajectory>>,
    /// Set when `expert` was just replaced; α is recomputed on the next
    /// update and then held.
    pub expert_fresh: bool,
    pub alpha: f64,
    pub dtw: Option<f64>,
}

impl AgentLearner {
    pub fn new(agent_id: usize, obs_dim: usize, action_dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Stream::Init, agent_id as u64);
        let policy = MlpParams::init(obs_dim, action_dim, &mut rng);
        let value_agent = MlpParams::init(obs_dim, 1, &mut rng);
        let value_expert = MlpParams::init(obs_dim, 1, &mut rng);
        Self {
            agent_id,
            opt_policy: AdamState::new(&policy),
            opt_value_agent: AdamState::new(&value_agent),
            opt_value_expert: AdamState::new(&value_expert),
            policy,
            value_agent,
            value_expert,
            expert: None,
            last_agent: None,
            expert_fresh: false,
            alpha: 1.0,
            dtw: None,
        }
    }
}

/// Losses from one agent's update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    /// Negated total objective, averaged over update epochs.
    pub policy_loss: f64,
    pub value_loss_agent: f64,
    /// NaN when the expert branch did not run.
    pub value_loss_expert: f64,
    pub alpha: f64,
    pub dtw: Option<f64>,
    pub entropy: f64,
}

/// Sample one episode with every agent acting on its own observation.
pub fn rollout(learners: &[AgentLearner], env: &mut RoadEnv, seed: u64) -> Result<Vec<Trajectory>, TrainError> {
    let n = env.n_agents();
    let initial = env.reset(seed);
    let mut rngs: Vec<_> = (0..n).map(|i| rng::stream(seed, Stream::Rollout, i as u64)).collect();
    let mut trajs: Vec<Trajectory> = env
        .specs()
        .iter()
        .zip(initial)
        .map(|(s, obs)| Trajectory::new(Source::Agent, s.agent_id, s.start, obs))
        .collect();
    while !env.episode_done() {
        let mut actions = vec![0; n];
        let mut pending: Vec<Option<(usize, f64)>> = vec![None; n];
        for agent in 0..n {
            if !env.is_active(agent) {
                continue;
            }
            let out = policy_forward(&learners[agent].policy, env.observation(agent))?;
            let a = out.sample_with(rngs[agent].gen::<f64>());
            actions[agent] = a;
            pending[agent] = Some((a, out.log_probs[a]));
        }
        let before: Vec<_> = pending
            .iter()
            .enumerate()
            .map(|(i, p)| p.map(|_| env.observation(i).clone()))
            .collect();
        let result = env.step(&actions)?;
        for agent in 0..n {
            let (Some((action, log_prob)), Some(obs)) = (pending[agent], before[agent].clone()) else {
                continue;
            };
            trajs[agent].push(
                Transition { obs, action, reward: result.rewards[agent], log_prob },
                env.state().position[agent],
                result.observations[agent].clone(),
            );
            if result.done[agent] {
                trajs[agent].arrived = true;
            }
        }
    }
    Ok(trajs)
}

struct Batch<'a> {
    traj: &'a Trajectory,
    logp_old: Vec<f64>,
    returns: Vec<f64>,
    adv: Vec<f64>,
    /// Advantages before normalization.
    #[cfg_attr(not(feature = "experts"), allow(dead_code))]
    raw: Vec<f64>,
}

fn value_batch<'a>(
    traj: &'a Trajectory,
    value: &MlpParams,
    gamma: f64,
    logp_old: Vec<f64>,
    norm: AdvantageNorm,
    agent_std: f64,
) -> Result<Batch<'a>, TrainError> {
    let returns = ppo::trajectory_returns(traj, value, gamma)?;
    let values = traj
        .transitions
        .iter()
        .map(|t| value.forward(&t.obs.features).map(|v| v[0]))
        .collect::<Result<Vec<_>, _>>()?;
    let raw = ppo::advantages(&returns, &values)?;
    Ok(Batch {
        traj,
        logp_old,
        adv: match norm {
            AdvantageNorm::ScaleByAgent => raw.iter().map(|a| a / (agent_std + 1e-8)).collect(),
            // pooled with the agent batch by the caller
            AdvantageNorm::Joint => raw.clone(),
            AdvantageNorm::Standardize => ppo::standardize(&raw),
            AdvantageNorm::ScaleByReturns => {
                let (_, sd) = mean_std(&returns);
                raw.iter().map(|a| a / (sd + 1e-8)).collect()
            }
            AdvantageNorm::Raw => raw.clone(),
        },
        raw,
        returns,
    })
}

/// Fit a value network to fixed returns; returns the mean MSE across steps.
fn fit_value(
    value: &mut MlpParams,
    opt: &mut AdamState,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let n = batch.returns.len() as f64;
    let mut cache = ForwardCache::default();
    let mut total = 0.0;
    for _ in 0..config.update_epochs {
        let mut grads = value.zeros_like();
        let mut predictions = Vec::with_capacity(batch.returns.len());
        for (t, &target) in batch.traj.transitions.iter().zip(&batch.returns) {
            value.forward_cached(&t.obs.features, &mut cache)?;
            let v = cache.out[0];
            predictions.push(v);
            value.accumulate_grad(&t.obs.features, &cache, &[2.0 * (v - target) / n], &mut grads)?;
        }
        total += ppo::value_loss(&predictions, &batch.returns)?;
        adam_step(value, &grads, opt, config.lr)?;
    }
    Ok(total / config.update_epochs as f64)
}

#[cfg(feature = "experts")]
fn log_probs_under(policy: &MlpParams, transitions: &[Transition]) -> Result<Vec<f64>, TrainError> {
    transitions
        .iter()
        .map(|t| Ok(policy_forward(policy, &t.obs)?.log_probs[t.action]))
        .collect()
}

/// Forward the policy over a batch, keeping caches for backpropagation.
fn policy_pass(
    policy: &MlpParams,
    transitions: &[Transition],
) -> Result<(Vec<ForwardCache>, Vec<PolicyOutput>), TrainError> {
    let mut caches = Vec::with_capacity(transitions.len());
    let mut outs = Vec::with_capacity(transitions.len());
    for t in transitions {
        let mut cache = ForwardCache::default();
        policy.forward_cached(&t.obs.features, &mut cache)?;
        outs.push(PolicyOutput::from_logits(&cache.out, &t.obs.mask)?);
        caches.push(cache);
    }
    Ok((caches, outs))
}

/// Accumulate `-(weight · d surrogate + entropy bonus)` into `grads`.
fn push_policy_grads(
    policy: &MlpParams,
    transitions: &[Transition],
    caches: &[ForwardCache],
    outs: &[PolicyOutput],
    d_logp: &[f64],
    weight: f64,
    d_entropy: f64,
    grads: &mut MlpParams,
) -> Result<(), TrainError> {
    let m = policy.out_dim();
    let mut upstream = vec![0.0; m];
    for (((t, cache), out), &g) in transitions.iter().zip(caches).zip(outs).zip(d_logp) {
        upstream.iter_mut().for_each(|u| *u = 0.0);
        upstream[t.action] = weight * g;
        let d_logits: Vec<f64> = out
            .logit_grad(&t.obs.mask, &upstream, d_entropy)
            .into_iter()
            .map(|d| -d)
            .collect();
        policy.accumulate_grad(&t.obs.features, cache, &d_logits, grads)?;
    }
    Ok(())
}

fn finite(value: f64, what: &str, agent: usize, epoch: usize) -> Result<f64, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::NonFinite { what: what.into(), agent, epoch })
    }
}

/// One agent's update from its own rollout and its held expert trajectory.
///
/// `k` is the 1-based epoch and `total_epochs` is K. Reads nothing from
/// other agents.
pub fn update_agent(
    learner: &mut AgentLearner,
    tau_a: &Trajectory,
    graph: &RoadGraph,
    k: usize,
    #[cfg_attr(not(feature = "experts"), allow(unused_variables))] total_epochs: usize,
    config: &TrainConfig,
) -> Result<UpdateStats, TrainError> {
    let agent = learner.agent_id;
    let mut stats = UpdateStats {
        value_loss_expert: f64::NAN,
        alpha: 1.0,
        ..Default::default()
    };
    learner.last_agent = Some(Arc::new(tau_a.clone()));
    if tau_a.is_empty() {
        return Ok(stats);
    }

    #[allow(unused_mut)]
    let mut batch_a = value_batch(
        tau_a,
        &learner.value_agent,
        config.gamma,
        tau_a.transitions.iter().map(|t| t.log_prob).collect(),
        AdvantageNorm::Standardize,
        1.0,
    )?;

    #[cfg(feature = "experts")]
    let expert_traj = match (config.mode, &learner.expert) {
        (Mode::Ippo, _) => None,
        (_, Some(e)) if !e.is_empty() => Some(e.clone()),
        _ => None,
    };
    #[cfg(feature = "experts")]
    let batch_e = match &expert_traj {
        Some(e) => {
            // π_old on expert state-actions is the policy as it stands now
            let logp_old = log_probs_under(&learner.policy, &e.transitions)?;
            let mut b = value_batch(
                e,
                &learner.value_expert,
                config.gamma,
                logp_old,
                config.expert_advantage,
                mean_std(&batch_a.raw).1,
            )?;
            if config.expert_advantage == AdvantageNorm::Joint {
                let pooled: Vec<f64> = batch_a.raw.iter().chain(&b.raw).copied().collect();
                let z = ppo::standardize(&pooled);
                let (za, ze) = z.split_at(batch_a.raw.len());
                batch_a.adv = za.to_vec();
                b.adv = ze.to_vec();
            }
            if config.expert_advantage_nonnegative {
                b.adv.iter_mut().for_each(|a| *a = a.max(0.0));
            }
            Some(b)
        }
        None => None,
    };

    stats.value_loss_agent = finite(
        fit_value(&mut learner.value_agent, &mut learner.opt_value_agent, &batch_a, config)?,
        "agent value loss",
        agent,
        k,
    )?;

    #[cfg(feature = "experts")]
    if let Some(batch_e) = &batch_e {
        stats.value_loss_expert = finite(
            fit_value(&mut learner.value_expert, &mut learner.opt_value_expert, batch_e, config)?,
            "expert value loss",
            agent,
            k,
        )?;
        if learner.expert_fresh {
            let dtw = dtw_distance(
                &to_feature_seq(tau_a, graph).map_err(|e| TrainError::Config(e.to_string()))?,
                &to_feature_seq(batch_e.traj, graph).map_err(|e| TrainError::Config(e.to_string()))?,
            )
            .map_err(|e| TrainError::Config(e.to_string()))?;
            learner.dtw = Some(dtw);
            learner.alpha = match config.mode {
                Mode::FixedAlpha(a) => a,
                _ => ppo::alpha_weight(k, total_epochs, dtw)?,
            };
            learner.expert_fresh = false;
        }
        stats.alpha = learner.alpha;
        stats.dtw = learner.dtw;
    }
    #[cfg(not(feature = "experts"))]
    let _ = graph;

    let alpha = stats.alpha;
    let n_a = tau_a.len() as f64;
    let mut objective_sum = 0.0;
    let mut entropy_sum = 0.0;
    for _ in 0..config.update_epochs {
        let mut grads = learner.policy.zeros_like();
        let (caches_a, outs_a) = policy_pass(&learner.policy, &tau_a.transitions)?;
        let logp_a: Vec<f64> = outs_a
            .iter()
            .zip(&tau_a.transitions)
            .map(|(o, t)| o.log_probs[t.action])
            .collect();
        let sur_a = ppo::clipped_surrogate(&logp_a, &batch_a.logp_old, &batch_a.adv, config.epsilon)?;
        let mean_entropy = outs_a.iter().map(|o| o.entropy).sum::<f64>() / n_a;
        #[cfg_attr(not(feature = "experts"), allow(unused_mut))]
        let mut mixed = sur_a.objective;
        push_policy_grads(
            &learner.policy,
            &tau_a.transitions,
            &caches_a,
            &outs_a,
            &sur_a.grad_logp,
            alpha,
            config.beta / n_a,
            &mut grads,
        )?;

        #[cfg(feature = "experts")]
        if let Some(batch_e) = &batch_e {
            let trans = &batch_e.traj.transitions;
            let (caches_e, outs_e) = policy_pass(&learner.policy, trans)?;
            let logp_e: Vec<f64> = outs_e.iter().zip(trans).map(|(o, t)| o.log_probs[t.action]).collect();
            let sur_e = ppo::clipped_surrogate(&logp_e, &batch_e.logp_old, &batch_e.adv, config.epsilon)?;
            mixed = ppo::mixed_policy_objective(sur_a.objective, sur_e.objective, alpha);
            push_policy_grads(
                &learner.policy,
                trans,
                &caches_e,
                &outs_e,
                &sur_e.grad_logp,
                1.0 - alpha,
                0.0,
                &mut grads,
            )?;
        }

        let objective = ppo::total_policy_objective(mixed, mean_entropy, config.beta);
        objective_sum += finite(-objective, "policy loss", agent, k)?;
        entropy_sum += mean_entropy;
        adam_step(&mut learner.policy, &grads, &mut learner.opt_policy, config.lr)?;
    }
    stats.policy_loss = objective_sum / config.update_epochs as f64;
    stats.entropy = entropy_sum / config.update_epochs as f64;
    log::debug!(
        "epoch {k} agent {agent}: len {} alpha {:.3} dtw {:?} entropy {:.3} adv_e {:?}",
        tau_a.len(),
        stats.alpha,
        stats.dtw,
        stats.entropy,
        {
            #[cfg(feature = "experts")]
            let a = batch_e.as_ref().map(|b| b.adv.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>());
            #[cfg(not(feature = "experts"))]
            let a: Option<Vec<f64>> = None;
            a
        }
    );
    Ok(stats)
}

/// One row of the metrics CSV plus per-agent detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_reward_a: f64,
    pub mean_reward_e: f64,
    pub alpha_mean: f64,
    pub dtw_mean: f64,
    pub validity_rate: f64,
    pub loss_policy: f64,
    pub loss_value_a: f64,
    pub loss_value_e: f64,
    pub seconds: f64,
    pub rewards_a: Vec<f64>,
    pub rewards_e: Vec<Option<f64>>,
    pub alphas: Vec<f64>,
    pub dtws: Vec<Option<f64>>,
    /// Demonstrations were regenerated this epoch.
    pub regenerated: bool,
}

pub const METRICS_HEADER: &str =
    "epoch,mean_reward_a,mean_reward_e,alpha_mean,dtw_mean,validity_rate,loss_policy,loss_value_a,loss_value_e,seconds";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:.6}",
            self.epoch,
            self.mean_reward_a,
            self.mean_reward_e,
            self.alpha_mean,
            self.dtw_mean,
            self.validity_rate,
            self.loss_policy,
            self.loss_value_a,
            self.loss_value_e,
            self.seconds,
        )
    }
}

fn mean_of(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Training state for one run.
pub struct Trainer {
    config: TrainConfig,
    graph: Arc<RoadGraph>,
    env: RoadEnv,
    learners: Vec<AgentLearner>,
    provider: ExpertProvider,
    prompt: PromptState,
    epoch: usize,
    validity: f64,
    generations: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, graph: Arc<RoadGraph>, provider: ExpertProvider) -> Result<Self, TrainError> {
        config.validate()?;
        if config.uses_experts() && provider.kind() == ProviderKind::None {
            return Err(TrainError::Config("mode needs an expert provider".into()));
        }
        let specs = resolve_specs(&config, &graph)?;
        let env = RoadEnv::new(graph.clone(), specs.clone(), config.reward, config.steps_per_episode)?;
        let learners = (0..specs.len())
            .map(|i| AgentLearner::new(i, env.obs_dim(), env.action_dim(), config.seed))
            .collect();
        let prompt = PromptState::new(&graph, &specs);
        Ok(Self {
            config,
            graph,
            env,
            learners,
            provider,
            prompt,
            epoch: 0,
            validity: f64::NAN,
            generations: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn graph(&self) -> &Arc<RoadGraph> {
        &self.graph
    }

    pub fn env(&self) -> &RoadEnv {
        &self.env
    }

    pub fn env_mut(&mut self) -> &mut RoadEnv {
        &mut self.env
    }

    pub fn specs(&self) -> &[AgentSpec] {
        self.env.specs()
    }

    pub fn learners(&self) -> &[AgentLearner] {
        &self.learners
    }

    pub fn prompt(&self) -> &PromptState {
        &self.prompt
    }

    pub fn provider_mut(&mut self) -> &mut ExpertProvider {
        &mut self.provider
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn generations(&self) -> usize {
        self.generations
    }

    pub fn is_regeneration_epoch(&self, k: usize) -> bool {
        self.config.uses_experts() && (k == 1 || k % self.config.sample_interval == 0)
    }

    /// Ask the provider for one instruction set under the current prompt.
    pub fn generate_demos<R: Rng>(&mut self, rng: &mut R) -> Result<Generated, TrainError> {
        Ok(self.provider.generate(&self.prompt, &self.graph, self.env.specs(), rng)?)
    }

    /// Fresh expert trajectories from the provider for the current prompt.
    fn regenerate(&mut self, k: usize) -> Result<(), TrainError> {
        let mut rng = rng::stream(self.config.seed, Stream::Expert, k as u64);
        let generated = self
            .provider
            .generate(&self.prompt, &self.graph, self.env.specs(), &mut rng)?;
        for err in &generated.parse_errors {
            log::debug!("epoch {k}: demonstration parse issue: {err}");
        }
        let policies: Vec<&MlpParams> = self.learners.iter().map(|l| &l.policy).collect();
        let exec = execute_demos(
            &mut self.env,
            &generated.set,
            self.config.route_fallback,
            rng::split(self.config.seed, Stream::Expert, k as u64),
            |agent, obs, action| {
                policy_forward(policies[agent], obs)
                    .map(|o| o.log_probs[action])
                    .unwrap_or(f64::NAN)
            },
        )?;
        self.validity = validity_rate(&exec.valid);
        for (learner, traj) in self.learners.iter_mut().zip(exec.trajectories) {
            learner.expert = traj.map(Arc::new);
            learner.expert_fresh = learner.expert.is_some();
        }
        self.generations += 1;
        Ok(())
    }

    /// Run epoch `self.epoch() + 1`.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics, TrainError> {
        let started = Instant::now();
        let k = self.epoch + 1;
        let total = self.config.epochs.max(k);
        let rollout_seed = rng::split(self.config.seed, Stream::Rollout, k as u64);
        let trajs = rollout(&self.learners, &mut self.env, rollout_seed)?;

        let regenerated = self.is_regeneration_epoch(k);
        if regenerated {
            self.regenerate(k)?;
        }

        let mut stats = Vec::with_capacity(self.learners.len());
        for (learner, tau_a) in self.learners.iter_mut().zip(&trajs) {
            stats.push(update_agent(learner, tau_a, &self.graph, k, total, &self.config)?);
        }

        if regenerated {
            let feedback = self
                .learners
                .iter()
                .zip(&trajs)
                .map(|(l, tau_a)| {
                    let (expert_path, expert_reward, expert_valid) = match &l.expert {
                        Some(e) => (e.junction_path.clone(), e.total_reward(), !e.substituted),
                        None => (Vec::new(), 0.0, false),
                    };
                    AgentFeedback {
                        agent: l.agent_id,
                        agent_path: tau_a.junction_path.clone(),
                        agent_reward: tau_a.total_reward(),
                        expert_path,
                        expert_reward,
                        expert_valid,
                        dtw: l.dtw.unwrap_or(f64::NAN),
                    }
                })
                .collect();
            refine_prompt(&mut self.prompt, k, feedback);
        }
        self.epoch = k;

        let rewards_a: Vec<f64> = trajs.iter().map(Trajectory::total_reward).collect();
        let rewards_e: Vec<Option<f64>> = self
            .learners
            .iter()
            .map(|l| l.expert.as_ref().map(|e| e.total_reward()))
            .collect();
        let uses_experts = self.config.uses_experts();
        let mean_or_nan = |xs: &[f64]| if uses_experts { mean_of(xs.iter().copied()) } else { f64::NAN };
        let value_e: Vec<f64> = stats
            .iter()
            .map(|s| s.value_loss_expert)
            .filter(|v| !v.is_nan())
            .collect();
        Ok(EpochMetrics {
            epoch: k,
            mean_reward_a: mean_of(rewards_a.iter().copied()),
            mean_reward_e: if uses_experts { mean_of(rewards_e.iter().flatten().copied()) } else { f64::NAN },
            alpha_mean: mean_of(stats.iter().map(|s| s.alpha)),
            dtw_mean: if uses_experts { mean_of(stats.iter().filter_map(|s| s.dtw)) } else { f64::NAN },
            validity_rate: if uses_experts { self.validity } else { f64::NAN },
            loss_policy: mean_of(stats.iter().map(|s| s.policy_loss)),
            loss_value_a: mean_of(stats.iter().map(|s| s.value_loss_agent)),
            loss_value_e: mean_or_nan(&value_e),
            seconds: if self.config.wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
            alphas: stats.iter().map(|s| s.alpha).collect(),
            dtws: stats.iter().map(|s| s.dtw).collect(),
            rewards_a,
            rewards_e,
            regenerated,
        })
    }

    /// Write one parameter file per network per agent plus a manifest.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir)?;
        for l in &self.learners {
            let i = l.agent_id;
            fs::write(dir.join(format!("agent_{i}_policy.json")), l.policy.to_checkpoint())?;
            fs::write(dir.join(format!("agent_{i}_value_a.json")), l.value_agent.to_checkpoint())?;
            fs::write(dir.join(format!("agent_{i}_value_e.json")), l.value_expert.to_checkpoint())?;
        }
        let manifest = CheckpointManifest {
            config_hash: self.config.hash(),
            epoch: self.epoch,
            n_agents: self.learners.len(),
            obs_dim: self.env.obs_dim(),
            action_dim: self.env.action_dim(),
        };
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        Ok(())
    }

    /// Train for the configured number of epochs. With `out`, metrics are
    /// appended to `metrics.csv` as they are produced and checkpoints are
    /// written under `checkpoints/`.
    pub fn train(&mut self, out: Option<&Path>) -> Result<Vec<EpochMetrics>, TrainError> {
        let mut csv = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let mut f = fs::File::create(dir.join(METRICS_FILE))?;
                writeln!(f, "{METRICS_HEADER}")?;
                Some(f)
            }
            None => None,
        };
        let mut all = Vec::with_capacity(self.config.epochs);
        while self.epoch < self.config.epochs {
            let m = self.run_epoch()?;
            if let Some(f) = csv.as_mut() {
                writeln!(f, "{}", m.csv_row())?;
                f.flush()?;
            }
            if let (Some(dir), every) = (out, self.config.checkpoint_every) {
                if every > 0 && m.epoch % every == 0 {
                    self.save_checkpoint(&dir.join("checkpoints").join(format!("epoch_{:06}", m.epoch)))?;
                }
            }
            log::info!(
                "epoch {} reward_a {:.3} alpha {:.3} dtw {:.3}",
                m.epoch,
                m.mean_reward_a,
                m.alpha_mean,
                m.dtw_mean
            );
            all.push(m);
        }
        if let Some(dir) = out {
            self.save_checkpoint(&dir.join("checkpoints").join("final"))?;
        }
        Ok(all)
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config_hash: String,
    pub epoch: usize,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
}

/// Load policies from a checkpoint directory after checking that its
/// manifest was written for `config`.
pub fn load_policies(dir: &Path, config: &TrainConfig) -> Result<Vec<MlpParams>, TrainError> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| TrainError::Checkpoint(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    if manifest.config_hash != config.hash() {
        return Err(TrainError::Checkpoint(format!(
            "checkpoint was written for config {} but this config hashes to {}",
            manifest.config_hash,
            config.hash()
        )));
    }
    (0..manifest.n_agents)
        .map(|i| {
            let path = dir.join(format!("agent_{i}_policy.json"));
            let text = fs::read_to_string(&path)
                .map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
            Ok(MlpParams::from_checkpoint(&text)?)
        })
        .collect()
}

/// Aggregate evaluation returns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Mean over agents of each episode's return.
    pub episode_means: Vec<f64>,
    pub per_agent_mean: Vec<f64>,
    pub per_agent_std: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run `episodes` episodes without learning. Greedy picks the most likely
/// action; otherwise actions are sampled from streams derived from `seed`.
pub fn evaluate_policies(
    policies: &[MlpParams],
    env: &mut RoadEnv,
    episodes: usize,
    greedy: bool,
    seed: u64,
) -> Result<EvalReport, TrainError> {
    let n = env.n_agents();
    if policies.len() != n {
        return Err(TrainError::Checkpoint(format!("{} policies for {n} agents", policies.len())));
    }
    let mut returns = vec![Vec::with_capacity(episodes); n];
    for ep in 0..episodes {
        let ep_seed = rng::split(seed, Stream::Evaluate, ep as u64);
        env.reset(ep_seed);
        let mut rngs: Vec<_> = (0..n).map(|i| rng::stream(ep_seed, Stream::Evaluate, i as u64)).collect();
        let mut totals = vec![0.0; n];
        while !env.episode_done() {
            let mut actions = vec![0; n];
            for agent in 0..n {
                if env.is_active(agent) {
                    let out = policy_forward(&policies[agent], env.observation(agent))?;
                    actions[agent] = if greedy { out.argmax() } else { out.sample_with(rngs[agent].gen()) };
                }
            }
            let r = env.step(&actions)?;
            totals.iter_mut().zip(&r.rewards).for_each(|(t, x)| *t += x);
        }
        for (agent, t) in totals.into_iter().enumerate() {
            returns[agent].push(t);
        }
    }
    let episode_means: Vec<f64> = (0..episodes)
        .map(|ep| returns.iter().map(|r| r[ep]).sum::<f64>() / n as f64)
        .collect();
    let (per_agent_mean, per_agent_std): (Vec<f64>, Vec<f64>) = returns.iter().map(|r| mean_std(r)).unzip();
    let (mean, std) = mean_std(&episode_means);
    Ok(EvalReport { episode_means, per_agent_mean, per_agent_std, mean, std })
}

/// Load checkpoints written for `config` and evaluate them.
pub fn evaluate(
    checkpoint_dir: &Path,
    config: &TrainConfig,
    graph: Arc<RoadGraph>,
    episodes: usize,
    greedy: bool,
) -> Result<EvalReport, TrainError> {
    let policies = load_policies(checkpoint_dir, config)?;
    let specs = resolve_specs(config, &graph)?;
    let mut env = RoadEnv::new(graph, specs, config.reward, config.steps_per_episode)?;
    if policies.iter().any(|p| p.in_dim() != env.obs_dim() || p.out_dim() != env.action_dim()) {
        return Err(TrainError::Checkpoint("network shapes do not match the graph".into()));
    }
    evaluate_policies(&policies, &mut env, episodes, greedy, config.seed)
}

/// Mean per-agent return when every agent drives its shortest path.
pub fn oracle_return(env: &mut RoadEnv) -> Result<f64, TrainError> {
    let set = crate::demo::oracle_expert(env.graph(), env.specs())?;
    let exec = execute_demos(env, &set, InvalidRouteFallback::OracleSubstitute, 0, |_, _, _| 0.0)?;
    Ok(mean_of(exec.trajectories.iter().flatten().map(|t| t.total_reward())))
}
