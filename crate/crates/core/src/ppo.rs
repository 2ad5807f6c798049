//! Scalar learning quantities: bootstrapped returns, advantages, the value
//! loss, the clipped surrogate, the DTW-driven mixing weight and the
//! entropy-regularized objective.
//!
//! Surrogates and the total objective are quantities to *maximize*; the
//! trainer descends their negation.

use thiserror::Error;

use crate::nn::{value_forward, MlpParams, NnError};
use crate::trajectory::Trajectory;

#[derive(Debug, Error, PartialEq)]
pub enum PpoError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite importance ratio at step {0}")]
    NonFiniteRatio(usize),
    #[error("DTW distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("epoch {k} outside 1..={total}")]
    EpochRange { k: usize, total: usize },
}

pub const STD_EPS: f64 = 1e-8;

/// `R_t = Σ_{j<T-t} γ^j r_{t+j} + γ^{T-t} V(o_T)`.
///
/// `terminal_value` is `V(o_T)`; pass 0 when the episode ended by arrival.
pub fn bootstrapped_returns(rewards: &[f64], terminal_value: f64, gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = terminal_value;
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        returns[t] = acc;
    }
    returns
}

/// Bootstrapped returns of a whole trajectory. The value network is
/// evaluated once on the terminal observation; arrival is absorbing, so its
/// tail value is 0.
pub fn trajectory_returns(traj: &Trajectory, value: &MlpParams, gamma: f64) -> Result<Vec<f64>, NnError> {
    let tail = if traj.arrived {
        0.0
    } else {
        value_forward(value, &traj.terminal_obs)?
    };
    Ok(bootstrapped_returns(&traj.rewards(), tail, gamma))
}

/// Raw advantages `A_t = R_t - V(o_t)`.
pub fn advantages(returns: &[f64], values: &[f64]) -> Result<Vec<f64>, PpoError> {
    if returns.len() != values.len() {
        return Err(PpoError::LengthMismatch(returns.len(), values.len()));
    }
    Ok(returns.iter().zip(values).map(|(r, v)| r - v).collect())
}

/// Shift to mean 0 and scale by `1 / (std + 1e-8)` (population std).
pub fn standardize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt() + STD_EPS;
    xs.iter().map(|x| (x - mean) / scale).collect()
}

/// Mean squared error between predicted values and returns.
pub fn value_loss(values: &[f64], returns: &[f64]) -> Result<f64, PpoError> {
    if values.len() != returns.len() {
        return Err(PpoError::LengthMismatch(values.len(), returns.len()));
    }
    if values.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let sum: f64 = values.iter().zip(returns).map(|(v, r)| (v - r).powi(2)).sum();
    Ok(sum / values.len() as f64)
}

/// Clipped surrogate with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub objective: f64,
    /// d objective / d logp_new per step.
    pub grad_logp: Vec<f64>,
    /// Fraction of steps where the clipped branch was selected.
    pub clip_fraction: f64,
}

/// `mean_t min(ω_t A_t, clip(ω_t, 1-ε, 1+ε) A_t)` with
/// `ω_t = exp(logp_new - logp_old)`.
pub fn clipped_surrogate(
    logp_new: &[f64],
    logp_old: &[f64],
    adv: &[f64],
    epsilon: f64,
) -> Result<Surrogate, PpoError> {
    if logp_new.len() != logp_old.len() {
        return Err(PpoError::LengthMismatch(logp_new.len(), logp_old.len()));
    }
    if logp_new.len() != adv.len() {
        return Err(PpoError::LengthMismatch(logp_new.len(), adv.len()));
    }
    if adv.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let n = adv.len() as f64;
    let mut objective = 0.0;
    let mut grad_logp = Vec::with_capacity(adv.len());
    let mut clipped = 0usize;
    for (t, ((&new, &old), &a)) in logp_new.iter().zip(logp_old).zip(adv).enumerate() {
        let ratio = (new - old).exp();
        if !ratio.is_finite() {
            return Err(PpoError::NonFiniteRatio(t));
        }
        let unclipped = ratio * a;
        let clipped_term = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * a;
        if unclipped <= clipped_term {
            objective += unclipped;
            grad_logp.push(unclipped / n);
        } else {
            objective += clipped_term;
            grad_logp.push(0.0);
            clipped += 1;
        }
    }
    Ok(Surrogate {
        objective: objective / n,
        grad_logp,
        clip_fraction: clipped as f64 / n,
    })
}

/// `α = exp(-(k/K) · D)` with 1-based epoch `k`.
pub fn alpha_weight(k: usize, total: usize, dtw: f64) -> Result<f64, PpoError> {
    if k == 0 || k > total {
        return Err(PpoError::EpochRange { k, total });
    }
    if !(dtw >= 0.0) {
        return Err(PpoError::NegativeDistance(dtw));
    }
    Ok((-(k as f64 / total as f64) * dtw).exp())
}

pub fn mixed_policy_objective(agent: f64, expert: f64, alpha: f64) -> f64 {
    alpha * agent + (1.0 - alpha) * expert
}

pub fn total_policy_objective(mixed: f64, mean_entropy: f64, beta: f64) -> f64 {
    mixed + beta * mean_entropy
}
