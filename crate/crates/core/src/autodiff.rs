//! Vector-valued reverse-mode automatic differentiation.
//!
//! A [`Tape`] records a straight-line computation over dense `f64` vectors.
//! Every node keeps its forward value; [`Tape::backward`] walks the record in
//! reverse and returns adjoints for every node, so gradients are available both
//! for parameter leaves and for intermediate quantities such as logits.
//!
//! Matrices are stored row-major as flat vectors and enter the tape through
//! [`Tape::input`] like any other leaf.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatVec {
        w: Var,
        x: Var,
        rows: usize,
        cols: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    LogSoftmax(Var),
    Pick(Var, usize),
    Exp(Var),
    Clamp(Var, f64, f64),
    Min(Var, Var),
    Max(Var, Var),
    Square(Var),
    Sum(Var),
    Concat(Vec<Var>),
    GatherMean {
        table: Var,
        cols: usize,
        rows: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Dense kernels shared by the tape and the tape-free inference path, so both
/// routes produce bit-identical values.
pub mod kernels {
    /// `out = W x` with `W` row-major `rows × cols`.
    pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), rows * cols);
        debug_assert_eq!(x.len(), cols);
        w.chunks_exact(cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
        x.iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect()
    }

    /// Log-softmax with max subtraction.
    pub fn log_softmax(x: &[f64]) -> Vec<f64> {
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        x.iter().map(|v| v - lse).collect()
    }

    /// Mean of selected rows of a row-major table; zeros when `rows` is empty.
    pub fn gather_mean(table: &[f64], cols: usize, rows: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; cols];
        if rows.is_empty() {
            return out;
        }
        for &r in rows {
            for (o, v) in out.iter_mut().zip(&table[r * cols..(r + 1) * cols]) {
                *o += v;
            }
        }
        let n = rows.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Records operations for a single backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node on a tape with respect to the backward root.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`.
    pub fn get(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1, "scalar() on a vector node");
        val[0]
    }

    /// Leaf node. Parameters and constants are both inputs; callers decide
    /// which adjoints they read back.
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.input(vec![value])
    }

    pub fn matvec(&mut self, w: Var, rows: usize, cols: usize, x: Var) -> Var {
        assert_eq!(self.value(w).len(), rows * cols, "matvec: weight shape");
        assert_eq!(self.value(x).len(), cols, "matvec: input length");
        let out = kernels::matvec(self.value(w), rows, cols, self.value(x));
        self.push(out, Op::MatVec { w, x, rows, cols })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).iter().map(|v| v * k).collect();
        self.push(out, Op::Scale(a, k))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = kernels::leaky_relu(self.value(a), slope);
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = kernels::log_softmax(self.value(a));
        self.push(out, Op::LogSoftmax(a))
    }

    /// Selects element `idx` as a length-1 node.
    pub fn pick(&mut self, a: Var, idx: usize) -> Var {
        let out = vec![self.value(a)[idx]];
        self.push(out, Op::Pick(a, idx))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|v| v.exp()).collect();
        self.push(out, Op::Exp(a))
    }

    /// Elementwise clamp. The gradient passes where `lo ≤ x ≤ hi` and is
    /// exactly zero outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).iter().map(|v| v.clamp(lo, hi)).collect();
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| if x <= y { x } else { y });
        self.push(out, Op::Min(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| if x >= y { x } else { y });
        self.push(out, Op::Max(a, b))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|v| v * v).collect();
        self.push(out, Op::Square(a))
    }

    /// Sum of all elements as a length-1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = vec![self.value(a).iter().sum()];
        self.push(out, Op::Sum(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let out = parts
            .iter()
            .flat_map(|p| self.value(*p).iter().copied())
            .collect();
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// Mean of the listed rows of a row-major embedding table.
    pub fn gather_mean(&mut self, table: Var, cols: usize, rows: &[usize]) -> Var {
        let out = kernels::gather_mean(self.value(table), cols, rows);
        self.push(
            out,
            Op::GatherMean {
                table,
                cols,
                rows: rows.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::LengthMismatch {
                what: "backward root must be scalar",
                left: root_val.len(),
                right: 1,
            });
        }
        if !root_val[0].is_finite() {
            return Err(Error::NonFiniteLoss(root_val[0]));
        }

        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        grads[root.0][0] = 1.0;

        for idx in (0..=root.0).rev() {
            let g = std::mem::take(&mut grads[idx]);
            if g.iter().all(|v| *v == 0.0) {
                grads[idx] = g;
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::MatVec { w, x, rows, cols } => {
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    {
                        let gw = &mut grads[w.0];
                        for i in 0..*rows {
                            if g[i] == 0.0 {
                                continue;
                            }
                            let row = &mut gw[i * cols..(i + 1) * cols];
                            for (gwij, xj) in row.iter_mut().zip(xv) {
                                *gwij += g[i] * xj;
                            }
                        }
                    }
                    let gx = &mut grads[x.0];
                    for i in 0..*rows {
                        if g[i] == 0.0 {
                            continue;
                        }
                        let row = &wv[i * cols..(i + 1) * cols];
                        for (gxj, wij) in gx.iter_mut().zip(row) {
                            *gxj += g[i] * wij;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g, |gi, _| gi, None);
                    accumulate(&mut grads[b.0], &g, |gi, _| gi, None);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], &g, |gi, _| gi, None);
                    accumulate(&mut grads[b.0], &g, |gi, _| -gi, None);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    accumulate(&mut grads[a.0], &g, |gi, i| gi * bv[i], None);
                    accumulate(&mut grads[b.0], &g, |gi, i| gi * av[i], None);
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads[a.0], &g, |gi, _| gi * k, None);
                }
                Op::LeakyRelu(a, slope) => {
                    let av = &self.nodes[a.0].value;
                    accumulate(
                        &mut grads[a.0],
                        &g,
                        |gi, i| if av[i] > 0.0 { gi } else { gi * slope },
                        None,
                    );
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let total: f64 = g.iter().sum();
                    accumulate(&mut grads[a.0], &g, |gi, i| gi - y[i].exp() * total, None);
                }
                Op::Pick(a, i) => {
                    grads[a.0][*i] += g[0];
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    accumulate(&mut grads[a.0], &g, |gi, i| gi * y[i], None);
                }
                Op::Clamp(a, lo, hi) => {
                    let av = &self.nodes[a.0].value;
                    accumulate(
                        &mut grads[a.0],
                        &g,
                        |gi, i| {
                            if av[i] >= *lo && av[i] <= *hi {
                                gi
                            } else {
                                0.0
                            }
                        },
                        None,
                    );
                }
                Op::Min(a, b) | Op::Max(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let is_min = matches!(node.op, Op::Min(..));
                    let take_a = |i: usize| {
                        if is_min {
                            av[i] <= bv[i]
                        } else {
                            av[i] >= bv[i]
                        }
                    };
                    accumulate(&mut grads[a.0], &g, |gi, i| if take_a(i) { gi } else { 0.0 }, None);
                    accumulate(&mut grads[b.0], &g, |gi, i| if take_a(i) { 0.0 } else { gi }, None);
                }
                Op::Square(a) => {
                    let av = &self.nodes[a.0].value;
                    accumulate(&mut grads[a.0], &g, |gi, i| 2.0 * av[i] * gi, None);
                }
                Op::Sum(a) => {
                    let n = grads[a.0].len();
                    grads[a.0].iter_mut().take(n).for_each(|v| *v += g[0]);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        accumulate(&mut grads[p.0], &g, |gi, _| gi, Some(offset));
                        offset += n;
                    }
                }
                Op::GatherMean { table, cols, rows } => {
                    if !rows.is_empty() {
                        let n = rows.len() as f64;
                        let gt = &mut grads[table.0];
                        for &r in rows {
                            for (dst, gi) in gt[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                                *dst += gi / n;
                            }
                        }
                    }
                }
            }
            grads[idx] = g;
        }
        Ok(Gradients { grads })
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "elementwise op on unequal lengths");
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

/// `dst[i] += f(g[offset + i], i)` over the length of `dst`.
fn accumulate(dst: &mut [f64], g: &[f64], f: impl Fn(f64, usize) -> f64, offset: Option<usize>) {
    let off = offset.unwrap_or(0);
    for (i, d) in dst.iter_mut().enumerate() {
        *d += f(g[off + i], i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut t = Tape::new();
        let w = t.input(vec![1.0, 2.0, 3.0]);
        let zero = t.scale(w, 0.0);
        let loss = t.sum(zero);
        let g = t.backward(loss).unwrap();
        assert!(g.get(w).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.constant(f64::NAN);
        assert!(matches!(t.backward(x), Err(Error::NonFiniteLoss(_))));
    }

    #[test]
    fn softmax_cross_entropy_matches_closed_form() {
        // loss = -log softmax(W x)[k]; dL/dW = (softmax - onehot) x^T
        let w = vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7];
        let x = vec![1.5, -0.5];
        let k = 1;
        let mut t = Tape::new();
        let wv = t.input(w.clone());
        let xv = t.input(x.clone());
        let logits = t.matvec(wv, 3, 2, xv);
        let lp = t.log_softmax(logits);
        let pick = t.pick(lp, k);
        let loss = t.scale(pick, -1.0);
        let g = t.backward(loss).unwrap();

        let z = kernels::matvec(&w, 3, 2, &x);
        let zmax = z.iter().copied().fold(f64::MIN, f64::max);
        let denom: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        for i in 0..3 {
            let p = (z[i] - zmax).exp() / denom;
            let d = p - if i == k { 1.0 } else { 0.0 };
            for j in 0..2 {
                assert!((g.get(wv)[i * 2 + j] - d * x[j]).abs() < 1e-14);
            }
            assert!((g.get(logits)[i] - d).abs() < 1e-14);
        }
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let f_tape = |params: &[f64]| -> (f64, Vec<f64>) {
            let mut t = Tape::new();
            let table = t.input(params[0..6].to_vec());
            let w = t.input(params[6..12].to_vec());
            let emb = t.gather_mean(table, 2, &[0, 2, 2]);
            let extra = t.input(vec![0.7]);
            let x = t.concat(&[emb, extra]);
            let h = t.matvec(w, 2, 3, x);
            let a = t.leaky_relu(h, 0.01);
            let e = t.exp(a);
            let c = t.clamp(e, 0.5, 1.8);
            let m = t.min(e, c);
            let s = t.square(m);
            let sub = t.sub(s, a);
            let mul = t.mul(sub, e);
            let lp = t.log_softmax(mul);
            let p = t.pick(lp, 0);
            let total = t.sum(mul);
            let mx = t.max(p, total);
            let loss = t.add(mx, total);
            let g = t.backward(loss).unwrap();
            let mut grad = g.get(table).to_vec();
            grad.extend_from_slice(g.get(w));
            (t.scalar(loss), grad)
        };
        let params = vec![
            0.1, -0.3, 0.25, 0.4, -0.2, 0.15, 0.5, -0.6, 0.3, 0.2, 0.45, -0.1,
        ];
        let (_, analytic) = f_tape(&params);
        let numeric = central_diff(|p| f_tape(p).0, &params, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn clamp_outside_band_blocks_gradient() {
        let mut t = Tape::new();
        let x = t.input(vec![2.0, 1.0, 0.1]);
        let c = t.clamp(x, 0.8, 1.2);
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x), &[0.0, 1.0, 0.0]);
    }
}
