use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};

/// Row-major dense matrix. Vectors are `rows × 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Shape of the token policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub vocab: usize,
    pub feature_len: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Generated tokens averaged into the history input.
    pub history: usize,
}

/// Token policy: context features and the mean embedding of the last few
/// generated tokens feed two leaky-rectified hidden layers and a vocabulary
/// head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub dims: PolicyDims,
    pub embed: Matrix,
    pub w_ctx: Matrix,
    pub w_tok: Matrix,
    pub b0: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

/// Two-layer value head `F → 2F → 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueParams {
    pub input: usize,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Shared tensor iteration used by the optimizer, clipping and checkpoints.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|m| m.data.iter().all(|v| v.is_finite()))
    }

    /// Puts every tensor on the tape, in `tensors()` order.
    fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|m| tape.input(m.data.clone()))
            .collect()
    }

    /// Reads back gradients for vars created by [`ParamSet::register`].
    fn collect_grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<Vec<f64>> {
        vars.iter().map(|v| grads.get(*v).to_vec()).collect()
    }

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.tensors().iter().map(|m| vec![0.0; m.len()]).collect()
    }
}

impl PolicyParams {
    pub fn init<R: Rng + ?Sized>(dims: PolicyDims, rng: &mut R) -> Self {
        let h = dims.hidden;
        let in0 = (dims.feature_len + dims.embed) as f64;
        PolicyParams {
            dims,
            embed: Matrix::uniform(dims.vocab, dims.embed, 1.0 / (dims.embed as f64).sqrt(), rng),
            w_ctx: Matrix::uniform(h, dims.feature_len, 1.0 / in0.sqrt(), rng),
            w_tok: Matrix::uniform(h, dims.embed, 1.0 / in0.sqrt(), rng),
            b0: Matrix::zeros(h, 1),
            w1: Matrix::uniform(h, h, 1.0 / (h as f64).sqrt(), rng),
            b1: Matrix::zeros(h, 1),
            w_out: Matrix::uniform(dims.vocab, h, 1.0 / (h as f64).sqrt(), rng),
            b_out: Matrix::zeros(dims.vocab, 1),
        }
    }

    /// All-zero weights: a uniform distribution over the vocabulary.
    pub fn zeros(dims: PolicyDims) -> Self {
        let h = dims.hidden;
        PolicyParams {
            dims,
            embed: Matrix::zeros(dims.vocab, dims.embed),
            w_ctx: Matrix::zeros(h, dims.feature_len),
            w_tok: Matrix::zeros(h, dims.embed),
            b0: Matrix::zeros(h, 1),
            w1: Matrix::zeros(h, h),
            b1: Matrix::zeros(h, 1),
            w_out: Matrix::zeros(dims.vocab, h),
            b_out: Matrix::zeros(dims.vocab, 1),
        }
    }
}

impl ParamSet for PolicyParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![
            &self.embed,
            &self.w_ctx,
            &self.w_tok,
            &self.b0,
            &self.w1,
            &self.b1,
            &self.w_out,
            &self.b_out,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.embed,
            &mut self.w_ctx,
            &mut self.w_tok,
            &mut self.b0,
            &mut self.w1,
            &mut self.b1,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

impl ValueParams {
    pub fn init<R: Rng + ?Sized>(input: usize, rng: &mut R) -> Self {
        let hidden = 2 * input;
        ValueParams {
            input,
            w1: Matrix::uniform(hidden, input, 1.0 / (input as f64).sqrt(), rng),
            b1: Matrix::zeros(hidden, 1),
            w2: Matrix::uniform(1, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            b2: Matrix::zeros(1, 1),
        }
    }

    pub fn zeros(input: usize) -> Self {
        let hidden = 2 * input;
        ValueParams {
            input,
            w1: Matrix::zeros(hidden, input),
            b1: Matrix::zeros(hidden, 1),
            w2: Matrix::zeros(1, hidden),
            b2: Matrix::zeros(1, 1),
        }
    }
}

impl ParamSet for ValueParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}
