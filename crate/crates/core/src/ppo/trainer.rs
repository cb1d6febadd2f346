use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::ReplayBuffer;
use super::gae::{discounted_returns, gae, lambda_returns, standardize};
use super::loss::{surrogate_on_tape, value_term_on_tape, ValueLossMode};
use super::optim::AdamW;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::policy::{
    backward, clip_global_norm, snapshot_reference, ParamSet, PolicyDims, PolicyParams,
    ReferencePolicy, ValueParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub actor_lr: f64,
    pub actor_weight_decay: f64,
    pub value_lr: f64,
    pub value_weight_decay: f64,
    pub eps_l: f64,
    pub eps_u: f64,
    pub eps_v: f64,
    pub gamma: f64,
    pub lambda_gae: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub batches_per_update: usize,
    pub grad_clip_policy: f64,
    pub grad_clip_value: f64,
    pub update_interval: u64,
    pub buffer_window: u64,
    pub checkpoint_interval: u64,
    pub decision_interval: u64,
    pub episode_length: u64,
    /// Responses sampled per decision.
    pub g: usize,
    pub use_critic: bool,
    pub value_loss_mode: ValueLossMode,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            actor_lr: 2.5e-5,
            actor_weight_decay: 1e-6,
            value_lr: 1e-5,
            value_weight_decay: 5e-7,
            eps_l: 0.2,
            eps_u: 0.5,
            eps_v: 0.2,
            gamma: 0.999,
            lambda_gae: 0.95,
            alpha: 1.0,
            batch_size: 8,
            batches_per_update: 5,
            grad_clip_policy: 0.5,
            grad_clip_value: 5.0,
            update_interval: 360,
            buffer_window: 400,
            checkpoint_interval: 720,
            decision_interval: 10,
            episode_length: 3600,
            g: 8,
            use_critic: true,
            value_loss_mode: ValueLossMode::Standard,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    /// Checks hard invariants; returns soft warnings.
    pub fn validate(&self, num_phases: usize) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eps_l > 0.0 && self.eps_l < 1.0) {
            return bad(format!("trainer.eps_l must be in (0, 1), got {}", self.eps_l));
        }
        if !(self.eps_u > 0.0) {
            return bad(format!("trainer.eps_u must be > 0, got {}", self.eps_u));
        }
        if !(self.eps_v > 0.0) {
            return bad(format!("trainer.eps_v must be > 0, got {}", self.eps_v));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda_gae", self.lambda_gae)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("trainer.{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("trainer.alpha must be >= 0, got {}", self.alpha));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("value_lr", self.value_lr),
            ("actor_weight_decay", self.actor_weight_decay),
            ("value_weight_decay", self.value_weight_decay),
            ("grad_clip_policy", self.grad_clip_policy),
            ("grad_clip_value", self.grad_clip_value),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("trainer.{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.g == 0 {
            return bad("trainer.g must be >= 1".into());
        }
        if self.batch_size == 0 || self.batches_per_update == 0 {
            return bad("trainer.batch_size and trainer.batches_per_update must be >= 1".into());
        }
        for (name, v) in [
            ("decision_interval", self.decision_interval),
            ("update_interval", self.update_interval),
            ("checkpoint_interval", self.checkpoint_interval),
            ("episode_length", self.episode_length),
            ("buffer_window", self.buffer_window),
        ] {
            if v == 0 {
                return bad(format!("trainer.{name} must be >= 1"));
            }
        }
        let mut warnings = Vec::new();
        if self.g < num_phases {
            warnings.push(format!(
                "trainer.g = {} is below the phase count {num_phases}; confidence estimates will be coarse",
                self.g
            ));
        }
        Ok(warnings)
    }

    pub fn decisions_per_episode(&self) -> u64 {
        self.episode_length / self.decision_interval
    }
}

/// Averages over the batches of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub step: u64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_advantage: f64,
    pub grad_norm_policy: f64,
    pub grad_norm_value: f64,
}

pub const TRAIN_LOG_HEADER: &str =
    "step,mean_ratio,clip_fraction,policy_loss,value_loss,mean_advantage,grad_norm_policy,grad_norm_value";

impl UpdateDiagnostics {
    pub fn write_csv_row<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.mean_ratio,
            self.clip_fraction,
            self.policy_loss,
            self.value_loss,
            self.mean_advantage,
            self.grad_norm_policy,
            self.grad_norm_value
        )
    }
}

/// Policy, value head, optimizers, buffer and training rng.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainerConfig,
    pub policy: PolicyParams,
    pub reference: ReferencePolicy,
    pub value: ValueParams,
    pub actor_opt: AdamW,
    pub value_opt: AdamW,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    /// Global timesteps of learning experience, across episodes.
    pub clock: u64,
    pub updates: u64,
}

struct Prepared {
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainerConfig, dims: PolicyDims) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = PolicyParams::init(dims, &mut rng);
        let value = ValueParams::init(dims.feature_len, &mut rng);
        Self::from_parts(config, policy, value, rng)
    }

    pub fn from_parts(
        config: TrainerConfig,
        policy: PolicyParams,
        value: ValueParams,
        rng: ChaCha8Rng,
    ) -> Self {
        Trainer {
            reference: snapshot_reference(&policy),
            actor_opt: AdamW::new(&policy, config.actor_lr, config.actor_weight_decay),
            value_opt: AdamW::new(&value, config.value_lr, config.value_weight_decay),
            buffer: ReplayBuffer::new(config.buffer_window as f64),
            config,
            policy,
            value,
            rng,
            clock: 0,
            updates: 0,
        }
    }

    /// Fresh seed for the rollouts of one decision.
    pub fn next_rollout_seed(&mut self) -> u64 {
        self.rng.gen()
    }

    fn prepare(&self) -> Result<Vec<Prepared>> {
        let c = &self.config;
        self.buffer
            .iter()
            .map(|rec| {
                let t = &rec.trajectory;
                if c.use_critic {
                    let values = vec![t.value_old; t.len()];
                    let advantages = gae(&t.rewards, &values, c.gamma, c.lambda_gae)?;
                    let returns = lambda_returns(&advantages, &values);
                    Ok(Prepared {
                        advantages,
                        returns,
                    })
                } else {
                    let advantages = discounted_returns(&t.rewards, c.gamma);
                    Ok(Prepared {
                        returns: advantages.clone(),
                        advantages,
                    })
                }
            })
            .collect()
    }

    /// One update: `n_b` shuffled batches of `B` buffered responses, one
    /// optimizer step per network per batch.
    pub fn update(&mut self) -> Result<UpdateDiagnostics> {
        if self.buffer.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let prepared = self.prepare()?;
        let n = self.buffer.len();
        let batch = self.config.batch_size.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut cursor = 0;

        let mut diag = UpdateDiagnostics {
            step: self.clock,
            ..Default::default()
        };
        let nb = self.config.batches_per_update;
        for _ in 0..nb {
            let mut idx = Vec::with_capacity(batch);
            while idx.len() < batch {
                if cursor == n {
                    order.shuffle(&mut self.rng);
                    cursor = 0;
                }
                idx.push(order[cursor]);
                cursor += 1;
            }
            let d = self.batch_step(&idx, &prepared)?;
            diag.mean_ratio += d.mean_ratio / nb as f64;
            diag.clip_fraction += d.clip_fraction / nb as f64;
            diag.policy_loss += d.policy_loss / nb as f64;
            diag.value_loss += d.value_loss / nb as f64;
            diag.mean_advantage += d.mean_advantage / nb as f64;
            diag.grad_norm_policy += d.grad_norm_policy / nb as f64;
            diag.grad_norm_value += d.grad_norm_value / nb as f64;
        }
        self.updates += 1;
        Ok(diag)
    }

    fn batch_step(&mut self, idx: &[usize], prepared: &[Prepared]) -> Result<UpdateDiagnostics> {
        let c = self.config.clone();
        let mut advantages: Vec<f64> = idx
            .iter()
            .flat_map(|&i| prepared[i].advantages.iter().copied())
            .collect();
        let total = advantages.len();
        let mean_advantage = advantages.iter().sum::<f64>() / total as f64;
        if c.use_critic {
            standardize(&mut advantages);
        }

        let mut tape = Tape::new();
        let pvars = self.policy.register(&mut tape);
        let vvars = self.value.register(&mut tape);
        let mut surr: Vec<Var> = Vec::with_capacity(total);
        let mut vterms: Vec<Var> = Vec::with_capacity(total);
        let (mut ratio_sum, mut clipped) = (0.0, 0usize);
        let mut k = 0;
        for &i in idx {
            let t = &self.buffer.get(i).trajectory;
            let lps = self
                .policy
                .logprobs_on_tape(&mut tape, &pvars, &t.context.features, &t.tokens);
            for (l, lp) in lps.into_iter().enumerate() {
                let ratio = (tape.scalar(lp) - t.logprobs[l]).exp();
                ratio_sum += ratio;
                if ratio < 1.0 - c.eps_l || ratio > 1.0 + c.eps_u {
                    clipped += 1;
                }
                surr.push(surrogate_on_tape(
                    &mut tape,
                    lp,
                    t.logprobs[l],
                    advantages[k],
                    c.eps_l,
                    c.eps_u,
                ));
                k += 1;
            }
            if c.use_critic {
                let v_new = self.value.value_on_tape(&mut tape, &vvars, &t.context.features);
                for &target in &prepared[i].returns {
                    vterms.push(value_term_on_tape(
                        &mut tape,
                        v_new,
                        t.value_old,
                        target,
                        c.eps_v,
                        c.value_loss_mode,
                    ));
                }
            }
        }

        let inv = 1.0 / total as f64;
        let joined = tape.concat(&surr);
        let j_sum = tape.sum(joined);
        let neg_j = tape.scale(j_sum, -inv);
        let (loss, value_loss) = if c.use_critic {
            let joined = tape.concat(&vterms);
            let v_sum = tape.sum(joined);
            let lv = tape.scale(v_sum, 0.5 * inv);
            let weighted = tape.scale(lv, c.alpha);
            (tape.add(neg_j, weighted), tape.scalar(lv))
        } else {
            (neg_j, 0.0)
        };
        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss(loss_value));
        }

        let mut grads = backward(
            &tape,
            loss,
            Some((&self.policy, &pvars)),
            c.use_critic.then_some((&self.value, vvars.as_slice())),
        )?;
        let grad_norm_policy = clip_global_norm(&mut grads.policy, c.grad_clip_policy);
        self.actor_opt.step(&mut self.policy, &grads.policy);
        let grad_norm_value = if c.use_critic {
            let norm = clip_global_norm(&mut grads.value, c.grad_clip_value);
            self.value_opt.step(&mut self.value, &grads.value);
            norm
        } else {
            0.0
        };

        Ok(UpdateDiagnostics {
            step: self.clock,
            mean_ratio: ratio_sum * inv,
            clip_fraction: clipped as f64 * inv,
            policy_loss: tape.scalar(neg_j),
            value_loss,
            mean_advantage,
            grad_norm_policy,
            grad_norm_value,
        })
    }
}
