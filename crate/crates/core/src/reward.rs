//! Decision-level and token-level rewards.
//!
//! The task reward of one decision is
//! `R = R_env − H_R + w_E · R_E`, where `R_E` is the semantic-confidence
//! bonus: the (softmax-tempered or plain) share of sampled responses that
//! agree with the chosen phase, paid only when `R_env > H_R`. The final token
//! of the action response carries `R`; every earlier token carries the
//! KL penalty `−β · KL`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    SoftmaxDse,
    NaiveDse,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvMode {
    /// `queue_prev − queue_curr`
    QueueDifference,
    /// `−queue_curr`
    NegativeQueue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Hurdle rate, in vehicles.
    pub hurdle: f64,
    /// Weight of the confidence bonus.
    pub w_e: f64,
    /// Softmax temperature over phase counts.
    pub tau: f64,
    /// KL penalty weight.
    pub beta: f64,
    pub entropy_mode: EntropyMode,
    pub env_mode: EnvMode,
    /// Sample the action response separately from the `G` confidence
    /// samples (`G + 1` rollouts per decision) instead of reusing the first.
    pub separate_action_sample: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            hurdle: 3.0,
            w_e: 1.0,
            tau: 1.0,
            beta: 0.05,
            entropy_mode: EntropyMode::SoftmaxDse,
            env_mode: EnvMode::QueueDifference,
            separate_action_sample: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("reward.tau must be > 0, got {}", self.tau)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("reward.beta must be >= 0, got {}", self.beta)));
        }
        if !(self.w_e >= 0.0) {
            return Err(Error::Config(format!("reward.w_e must be >= 0, got {}", self.w_e)));
        }
        if !self.hurdle.is_finite() {
            return Err(Error::Config("reward.hurdle must be finite".into()));
        }
        Ok(())
    }
}

pub fn env_reward(queue_prev: f64, queue_curr: f64, mode: EnvMode) -> f64 {
    match mode {
        EnvMode::QueueDifference => queue_prev - queue_curr,
        EnvMode::NegativeQueue => -queue_curr,
    }
}

pub fn hurdle(r_env: f64, hurdle_rate: f64) -> f64 {
    r_env - hurdle_rate
}

/// `exp(c_j/τ) / Σ_k exp(c_k/τ)` with the maximum count subtracted first.
pub fn softmax_dse_prob(counts: &[usize], chosen: usize, tau: f64) -> f64 {
    debug_assert!(tau > 0.0);
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    let weight = |c: usize| ((c as f64 - max) / tau).exp();
    weight(counts[chosen]) / counts.iter().map(|&c| weight(c)).sum::<f64>()
}

/// Empirical share of the chosen phase.
pub fn naive_dse_prob(counts: &[usize], chosen: usize) -> f64 {
    let total: usize = counts.iter().sum();
    debug_assert!(total > 0);
    counts[chosen] as f64 / total as f64
}

/// The confidence bonus: `p_chosen` when `r_env` strictly clears the
/// hurdle, otherwise exactly zero.
pub fn gated_entropy_reward(p_chosen: f64, r_env: f64, hurdle_rate: f64) -> f64 {
    if r_env > hurdle_rate {
        p_chosen
    } else {
        0.0
    }
}

pub fn total_reward(r_env: f64, hurdle_rate: f64, w_e: f64, r_e: f64) -> f64 {
    r_env - hurdle_rate + w_e * r_e
}

/// K3 estimate `ρ − ln ρ − 1` for a probability ratio `ρ > 0`.
pub fn k3_from_ratio(ratio: f64) -> f64 {
    let x = ratio - 1.0;
    (x - x.ln_1p()).max(0.0)
}

/// Per-token K3 divergence with `ρ = π_ref(a) / π_θ(a)`. Evaluated in the
/// log domain: `ρ − ln ρ − 1 = expm1(d) − d` with `d = logp_ref − logp_policy`.
pub fn k3_kl(logp_policy: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_policy;
    (d.exp_m1() - d).max(0.0)
}

/// Token rewards for one response: `−β·KL` at every position but the last,
/// which carries `final_reward` alone.
pub fn assemble_token_rewards(
    final_reward: f64,
    beta: f64,
    policy_logprobs: &[f64],
    ref_logprobs: &[f64],
) -> Result<Vec<f64>> {
    if policy_logprobs.len() != ref_logprobs.len() {
        return Err(Error::LengthMismatch {
            what: "policy vs reference log-probs",
            left: policy_logprobs.len(),
            right: ref_logprobs.len(),
        });
    }
    let n = policy_logprobs.len();
    if n == 0 {
        return Err(Error::LengthMismatch {
            what: "empty trajectory",
            left: 0,
            right: 1,
        });
    }
    let mut out: Vec<f64> = policy_logprobs
        .iter()
        .zip(ref_logprobs)
        .map(|(p, r)| -beta * k3_kl(*p, *r))
        .collect();
    out[n - 1] = final_reward;
    Ok(out)
}

/// Everything computed for one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub r_env: f64,
    pub r_total: f64,
    pub p_chosen: Option<f64>,
    pub r_e: f64,
    pub gate_open: bool,
}

/// Decision-level reward from the queue change and, when confidence shaping
/// is on, the phase histogram of the sampled responses.
pub fn decision_reward(
    config: &RewardConfig,
    queue_prev: f64,
    queue_curr: f64,
    counts: Option<&[usize]>,
    chosen: usize,
) -> RewardBundle {
    let r_env = env_reward(queue_prev, queue_curr, config.env_mode);
    let p_chosen = match (config.entropy_mode, counts) {
        (EntropyMode::SoftmaxDse, Some(c)) => Some(softmax_dse_prob(c, chosen, config.tau)),
        (EntropyMode::NaiveDse, Some(c)) => Some(naive_dse_prob(c, chosen)),
        _ => None,
    };
    let gate_open = r_env > config.hurdle;
    let r_e = p_chosen.map_or(0.0, |p| gated_entropy_reward(p, r_env, config.hurdle));
    RewardBundle {
        r_env,
        r_total: total_reward(r_env, config.hurdle, config.w_e, r_e),
        p_chosen,
        r_e,
        gate_open,
    }
}

/// One line of the per-decision JSONL log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub time: f64,
    pub chosen_phase: usize,
    pub counts: Option<Vec<usize>>,
    pub p_chosen: Option<f64>,
    #[serde(rename = "R_env")]
    pub r_env: f64,
    #[serde(rename = "R_total")]
    pub r_total: f64,
    pub gate_open: bool,
}
