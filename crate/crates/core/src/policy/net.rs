//! Forward passes. The tape-free path (sampling, evaluation) and the tape
//! path (training) call the same kernels in the same order, so log-probs
//! recorded at sampling time equal teacher-forced ones bit for bit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{PolicyParams, ValueParams};
use crate::autodiff::{kernels, Tape, Var};
use crate::error::{Error, Result};
use crate::language::Vocabulary;

pub const LEAKY_SLOPE: f64 = 0.01;

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Indices into `PolicyParams::tensors()` order.
mod slot {
    pub const EMBED: usize = 0;
    pub const W_CTX: usize = 1;
    pub const W_TOK: usize = 2;
    pub const B0: usize = 3;
    pub const W1: usize = 4;
    pub const B1: usize = 5;
    pub const W_OUT: usize = 6;
    pub const B_OUT: usize = 7;
}

impl PolicyParams {
    /// `W_ctx · features`, shared by every position of a response.
    pub fn project_context(&self, features: &[f64]) -> Vec<f64> {
        let d = self.dims;
        kernels::matvec(&self.w_ctx.data, d.hidden, d.feature_len, features)
    }

    /// Next-token logits after `prefix` (the tokens generated so far).
    pub fn logits(&self, context_proj: &[f64], prefix: &[usize]) -> Vec<f64> {
        let d = self.dims;
        let recent = &prefix[prefix.len().saturating_sub(d.history)..];
        let mean = kernels::gather_mean(&self.embed.data, d.embed, recent);
        let tok = kernels::matvec(&self.w_tok.data, d.hidden, d.embed, &mean);
        let pre0 = add(&add(context_proj, &tok), &self.b0.data);
        let h0 = kernels::leaky_relu(&pre0, LEAKY_SLOPE);
        let pre1 = add(
            &kernels::matvec(&self.w1.data, d.hidden, d.hidden, &h0),
            &self.b1.data,
        );
        let h1 = kernels::leaky_relu(&pre1, LEAKY_SLOPE);
        add(
            &kernels::matvec(&self.w_out.data, d.vocab, d.hidden, &h1),
            &self.b_out.data,
        )
    }

    /// Log-distribution over the vocabulary after `prefix`.
    pub fn log_distribution(&self, features: &[f64], prefix: &[usize]) -> Vec<f64> {
        kernels::log_softmax(&self.logits(&self.project_context(features), prefix))
    }

    pub fn context_on_tape(&self, tape: &mut Tape, vars: &[Var], features: &[f64]) -> Var {
        let d = self.dims;
        let f = tape.input(features.to_vec());
        tape.matvec(vars[slot::W_CTX], d.hidden, d.feature_len, f)
    }

    pub fn logits_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        context_proj: Var,
        prefix: &[usize],
    ) -> Var {
        let d = self.dims;
        let recent = &prefix[prefix.len().saturating_sub(d.history)..];
        let mean = tape.gather_mean(vars[slot::EMBED], d.embed, recent);
        let tok = tape.matvec(vars[slot::W_TOK], d.hidden, d.embed, mean);
        let s = tape.add(context_proj, tok);
        let pre0 = tape.add(s, vars[slot::B0]);
        let h0 = tape.leaky_relu(pre0, LEAKY_SLOPE);
        let z1 = tape.matvec(vars[slot::W1], d.hidden, d.hidden, h0);
        let pre1 = tape.add(z1, vars[slot::B1]);
        let h1 = tape.leaky_relu(pre1, LEAKY_SLOPE);
        let out = tape.matvec(vars[slot::W_OUT], d.vocab, d.hidden, h1);
        tape.add(out, vars[slot::B_OUT])
    }

    /// Per-token log-probs of `tokens` on the tape, teacher-forced.
    pub fn logprobs_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        features: &[f64],
        tokens: &[usize],
    ) -> Vec<Var> {
        let ctx = self.context_on_tape(tape, vars, features);
        (0..tokens.len())
            .map(|l| {
                let logits = self.logits_on_tape(tape, vars, ctx, &tokens[..l]);
                let lp = tape.log_softmax(logits);
                tape.pick(lp, tokens[l])
            })
            .collect()
    }
}

/// Output of one autoregressive rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<usize>,
    /// Log-prob of each sampled token under the untempered policy.
    pub logprobs: Vec<f64>,
    /// True when generation ended on EOS rather than the length cap.
    pub eos: bool,
}

/// Samples a response from `softmax(logits / temperature)`, stopping at EOS
/// or after `max_len` tokens.
pub fn sample_response<R: Rng + ?Sized>(
    params: &PolicyParams,
    features: &[f64],
    vocab: &Vocabulary,
    temperature: f64,
    max_len: usize,
    rng: &mut R,
) -> Response {
    assert!(temperature > 0.0, "sampling temperature must be positive");
    let ctx = params.project_context(features);
    let mut tokens = Vec::with_capacity(max_len);
    let mut logprobs = Vec::with_capacity(max_len);
    let mut eos = false;
    while tokens.len() < max_len {
        let logits = params.logits(&ctx, &tokens);
        let logp = kernels::log_softmax(&logits);
        let choice = if temperature == 1.0 {
            categorical(&logp, rng)
        } else {
            let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
            categorical(&kernels::log_softmax(&scaled), rng)
        };
        tokens.push(choice);
        logprobs.push(logp[choice]);
        if choice == vocab.eos() {
            eos = true;
            break;
        }
    }
    Response {
        tokens,
        logprobs,
        eos,
    }
}

/// Inverse-CDF draw from a log-distribution.
fn categorical<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final partial sum: take the last token with
    // nonzero mass
    logp.iter()
        .rposition(|lp| lp.exp() > 0.0)
        .unwrap_or(logp.len() - 1)
}

/// Teacher-forced per-token log-probs.
pub fn logprobs(params: &PolicyParams, features: &[f64], tokens: &[usize]) -> Result<Vec<f64>> {
    if let Some(&token) = tokens.iter().find(|&&t| t >= params.dims.vocab) {
        return Err(Error::TokenOutOfVocab {
            token,
            vocab: params.dims.vocab,
        });
    }
    let ctx = params.project_context(features);
    Ok((0..tokens.len())
        .map(|l| kernels::log_softmax(&params.logits(&ctx, &tokens[..l]))[tokens[l]])
        .collect())
}

/// A value-head query. The state after the final token is terminal and has
/// value zero by convention.
#[derive(Debug, Clone, Copy)]
pub enum ValueInput<'a> {
    State(&'a [f64]),
    Terminal,
}

impl ValueParams {
    pub fn forward(&self, features: &[f64]) -> f64 {
        let h = 2 * self.input;
        let z = add(
            &kernels::matvec(&self.w1.data, h, self.input, features),
            &self.b1.data,
        );
        let a = kernels::leaky_relu(&z, LEAKY_SLOPE);
        kernels::matvec(&self.w2.data, 1, h, &a)[0] + self.b2.data[0]
    }

    pub fn value(&self, input: ValueInput<'_>) -> f64 {
        match input {
            ValueInput::State(f) => self.forward(f),
            ValueInput::Terminal => 0.0,
        }
    }

    /// Value of `features` on the tape, `vars` from `register`.
    pub fn value_on_tape(&self, tape: &mut Tape, vars: &[Var], features: &[f64]) -> Var {
        let h = 2 * self.input;
        let f = tape.input(features.to_vec());
        let z = tape.matvec(vars[0], h, self.input, f);
        let z = tape.add(z, vars[1]);
        let a = tape.leaky_relu(z, LEAKY_SLOPE);
        let out = tape.matvec(vars[2], 1, h, a);
        tape.add(out, vars[3])
    }
}
