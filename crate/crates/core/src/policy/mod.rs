//! Token-emitting policy, frozen reference, and value head.

mod net;
mod params;

use serde::{Deserialize, Serialize};

pub use net::{logprobs, sample_response, Response, ValueInput, LEAKY_SLOPE};
pub use params::{Matrix, ParamSet, PolicyDims, PolicyParams, ValueParams};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::language::PromptContext;

/// One generated response together with everything the trainer needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTrajectory {
    pub context: PromptContext,
    pub tokens: Vec<usize>,
    /// Log-probs under the policy that sampled the response.
    pub logprobs: Vec<f64>,
    /// Value of the initial state at sampling time.
    pub value_old: f64,
    pub rewards: Vec<f64>,
    pub phase: usize,
    /// Ended on EOS.
    pub terminal: bool,
}

impl TokenTrajectory {
    pub fn new(context: PromptContext, response: Response, value_old: f64, phase: usize) -> Self {
        let n = response.tokens.len();
        TokenTrajectory {
            context,
            tokens: response.tokens,
            logprobs: response.logprobs,
            value_old,
            rewards: vec![0.0; n],
            phase,
            terminal: response.eos,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Parameter-shaped gradients for both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub policy: Vec<Vec<f64>>,
    pub value: Vec<Vec<f64>>,
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        grads
            .iter_mut()
            .flat_map(|g| g.iter_mut())
            .for_each(|v| *v *= k);
    }
    norm
}

/// Reverse pass from `loss`, collecting gradients for whichever networks
/// were registered on the tape.
pub fn backward(
    tape: &Tape,
    loss: Var,
    policy: Option<(&PolicyParams, &[Var])>,
    value: Option<(&ValueParams, &[Var])>,
) -> Result<GradientBundle> {
    let grads = tape.backward(loss)?;
    Ok(GradientBundle {
        policy: policy.map_or_else(Vec::new, |(p, v)| p.collect_grads(&grads, v)),
        value: value.map_or_else(Vec::new, |(p, v)| p.collect_grads(&grads, v)),
    })
}

/// Immutable copy of a policy used as the KL anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy {
    params: PolicyParams,
}

impl ReferencePolicy {
    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn logprobs(&self, features: &[f64], tokens: &[usize]) -> Result<Vec<f64>> {
        logprobs(&self.params, features, tokens)
    }
}

pub fn snapshot_reference(params: &PolicyParams) -> ReferencePolicy {
    ReferencePolicy {
        params: params.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::kernels;
    use crate::language::Vocabulary;
    use crate::sim::{build_topology, Preset, TopologyConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        let t = build_topology(&TopologyConfig::preset(Preset::Toy8)).unwrap();
        Vocabulary::new(&t, 16)
    }

    fn dims(v: &Vocabulary) -> PolicyDims {
        PolicyDims {
            vocab: v.size(),
            feature_len: 40,
            embed: 8,
            hidden: 16,
            history: 4,
        }
    }

    fn features(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..40).map(|_| rng.gen_range(0..12) as f64).collect()
    }

    #[test]
    fn greedy_limit_picks_argmax() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = PolicyParams::init(dims(&v), &mut rng);
        let f = features(&mut rng);
        let r = sample_response(&p, &f, &v, 1e-6, 10, &mut rng);
        let ctx = p.project_context(&f);
        for l in 0..r.tokens.len() {
            let logits = p.logits(&ctx, &r.tokens[..l]);
            let argmax = (0..logits.len())
                .max_by(|a, b| logits[*a].total_cmp(&logits[*b]))
                .unwrap();
            assert_eq!(r.tokens[l], argmax);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic_and_bounded() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = PolicyParams::init(dims(&v), &mut rng);
        let f = features(&mut rng);
        let a = sample_response(&p, &f, &v, 1.0, 32, &mut ChaCha8Rng::seed_from_u64(1));
        let b = sample_response(&p, &f, &v, 1.0, 32, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        let one = sample_response(&p, &f, &v, 1.0, 1, &mut rng);
        assert_eq!(one.tokens.len(), 1);
        assert!(a.logprobs.iter().all(|lp| *lp <= 0.0));
    }

    #[test]
    fn teacher_forcing_reproduces_sampling_logprobs() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = PolicyParams::init(dims(&v), &mut rng);
        for _ in 0..20 {
            let f = features(&mut rng);
            let r = sample_response(&p, &f, &v, 1.0, 32, &mut rng);
            let lp = logprobs(&p, &f, &r.tokens).unwrap();
            for (a, b) in lp.iter().zip(&r.logprobs) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn uniform_parameters_give_log_inverse_vocab() {
        let v = vocab();
        let p = PolicyParams::zeros(dims(&v));
        let lp = logprobs(&p, &[1.0; 40], &[0, 5, 9, v.eos()]).unwrap();
        for x in lp {
            assert!((x + (v.size() as f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_vocab_token_is_rejected() {
        let v = vocab();
        let p = PolicyParams::zeros(dims(&v));
        assert!(logprobs(&p, &[0.0; 40], &[v.size()]).is_err());
    }

    #[test]
    fn output_weight_perturbation_is_local() {
        // Changing the output row of token k only moves log-probs through the
        // normalizer; a position's log-prob changes iff its logits include k,
        // which is every position, but the *logits* of other rows stay fixed.
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = PolicyParams::init(dims(&v), &mut rng);
        let f = features(&mut rng);
        let tokens = vec![3, 7, v.eos()];
        let ctx = p.project_context(&f);
        let before: Vec<_> = (0..3).map(|l| p.logits(&ctx, &tokens[..l])).collect();
        let mut q = p.clone();
        q.w_out.data[7 * p.dims.hidden + 2] += 0.5;
        let after: Vec<_> = (0..3).map(|l| q.logits(&ctx, &tokens[..l])).collect();
        for (b, a) in before.iter().zip(&after) {
            for k in 0..v.size() {
                if k == 7 {
                    continue;
                }
                assert_eq!(a[k], b[k]);
            }
        }
        // Embedding of a token never generated leaves every log-prob intact.
        let mut e = p.clone();
        e.embed.data[20 * p.dims.embed] += 1.0;
        assert_eq!(
            logprobs(&p, &f, &tokens).unwrap(),
            logprobs(&e, &f, &tokens).unwrap()
        );
        // Embedding of the first token changes later positions only.
        let mut e0 = p.clone();
        e0.embed.data[3 * p.dims.embed] += 1.0;
        let l0 = logprobs(&p, &f, &tokens).unwrap();
        let l1 = logprobs(&e0, &f, &tokens).unwrap();
        assert_eq!(l0[0], l1[0]);
        assert_ne!(l0[1], l1[1]);
    }

    #[test]
    fn value_conventions() {
        let z = ValueParams::zeros(40);
        assert_eq!(z.value(ValueInput::State(&[3.0; 40])), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vp = ValueParams::init(40, &mut rng);
        assert_eq!(vp.value(ValueInput::Terminal), 0.0);
        let f = features(&mut rng);
        assert_eq!(vp.value(ValueInput::State(&f)), vp.value(ValueInput::State(&f)));
        assert_eq!(vp.w1.rows, 80);
    }

    #[test]
    fn reference_is_frozen() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = PolicyParams::init(dims(&v), &mut rng);
        let f = features(&mut rng);
        let toks = vec![1, 2, 3];
        let r = snapshot_reference(&p);
        let rr = snapshot_reference(r.params());
        let before = r.logprobs(&f, &toks).unwrap();
        assert_eq!(before, logprobs(&p, &f, &toks).unwrap());
        for m in p.tensors_mut() {
            m.data.iter_mut().for_each(|x| *x += 0.1);
        }
        assert_eq!(r.logprobs(&f, &toks).unwrap(), before);
        assert_eq!(rr.logprobs(&f, &toks).unwrap(), before);
    }

    #[test]
    fn clip_global_norm_contract() {
        let mut g = vec![vec![6.0, 0.0], vec![8.0]];
        let pre = clip_global_norm(&mut g, 0.5);
        assert_eq!(pre, 10.0);
        assert!((global_norm(&g) - 0.5).abs() <= 1e-9);
        let mut small = vec![vec![0.1]];
        clip_global_norm(&mut small, 0.5);
        assert_eq!(small, vec![vec![0.1]]);
    }

    #[test]
    fn single_token_sampling_matches_softmax() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = PolicyParams::init(dims(&v), &mut rng);
        let f = features(&mut rng);
        let probs: Vec<f64> = p
            .log_distribution(&f, &[])
            .iter()
            .map(|x| x.exp())
            .collect();
        let n = 100_000;
        let mut counts = vec![0usize; v.size()];
        for _ in 0..n {
            counts[sample_response(&p, &f, &v, 1.0, 1, &mut rng).tokens[0]] += 1;
        }
        for (c, q) in counts.iter().zip(&probs) {
            let se = (q * (1.0 - q) / n as f64).sqrt();
            let freq = *c as f64 / n as f64;
            assert!((freq - q).abs() <= 3.0 * se + 1e-12, "{freq} vs {q}");
        }
    }

    proptest! {
        #[test]
        fn distributions_are_normalized(seed in 0u64..1000, prefix in prop::collection::vec(0usize..37, 0..10)) {
            let v = vocab();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = PolicyParams::init(dims(&v), &mut rng);
            let f = features(&mut rng);
            let total: f64 = kernels::log_softmax(&p.logits(&p.project_context(&f), &prefix))
                .iter()
                .map(|x| x.exp())
                .sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }
}
