//! Reverse-mode automatic differentiation on an arena tape.
//!
//! A [`Tape`] owns every tensor produced during one forward pass as a flat
//! arena indexed by [`VarId`]; each recorded operation stores the ids of its
//! inputs and output plus whatever it saved for the backward rule. `backward`
//! replays the record in reverse, accumulating gradients additively in fixed
//! tape order, so two runs over the same graph produce bit-identical
//! gradients.
//!
//! The op set is exactly what the forecaster needs: matmul, the elementwise
//! family (add, sub, mul, exp, expm1, silu, softplus, dropout), a depthwise
//! causal convolution, the state-space discretization helpers, and the
//! sequential selective scan with a hand-derived reverse recurrence.

use crate::error::{Error, Result};
use crate::tensor::{matmul_at_b_accum, matmul_g_bt_accum, matmul_into, Tensor};
use rand::Rng;

pub type VarId = usize;

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn silu_val(z: f64) -> f64 {
    z * sigmoid(z)
}

/// ln(1 + e^z) with an overflow guard: above 30 the correction term is below
/// f64 resolution, so return z directly.
pub(crate) fn softplus_val(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// phi(z) = (e^z - 1)/z, the factor turning Euler's delta*B into the exact
/// zero-order-hold input map. Below 1e-8 the limit value 1 is returned.
pub(crate) fn phi_val(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0
    } else {
        z.exp_m1() / z
    }
}

/// d/dz phi(z) = phi(z) + (1 - phi(z))/z, rewritten from the saved output so
/// the backward pass needs no fresh exponential.
fn phi_grad(z: f64, phi: f64) -> f64 {
    if z.abs() < 1e-8 {
        0.5
    } else {
        phi + (1.0 - phi) / z
    }
}

#[derive(Debug)]
enum Op {
    Matmul { a: VarId, b: VarId, out: VarId },
    Add { a: VarId, b: VarId, out: VarId },
    Sub { a: VarId, b: VarId, out: VarId },
    Mul { a: VarId, b: VarId, out: VarId },
    Scale { a: VarId, c: f64, out: VarId },
    AddBias { a: VarId, bias: VarId, out: VarId },
    MulCols { a: VarId, scale: VarId, out: VarId },
    Exp { a: VarId, out: VarId },
    Expm1 { a: VarId, out: VarId },
    Phi { a: VarId, out: VarId },
    Softplus { a: VarId, out: VarId },
    Silu { a: VarId, out: VarId },
    Dropout { a: VarId, out: VarId, mask: Vec<f64> },
    CausalConv { x: VarId, kernel: VarId, bias: VarId, out: VarId },
    DeltaOuterA { delta: VarId, a: VarId, out: VarId },
    DeltaOuterB { delta: VarId, b: VarId, out: VarId },
    Scan { abar: VarId, bbar: VarId, c: VarId, x: VarId, out: VarId, h: Vec<f64> },
    ConcatCols { parts: Vec<VarId>, out: VarId },
    SliceCols { a: VarId, start: usize, out: VarId },
    Transpose { a: VarId, out: VarId },
    Sum { a: VarId, out: VarId },
    MeanSqDiff { pred: VarId, target: Tensor, out: VarId },
}

pub struct Tape {
    vals: Vec<Tensor>,
    requires: Vec<bool>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
    recording: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self { vals: Vec::new(), requires: Vec::new(), ops: Vec::new(), grads: Vec::new(), recording: true }
    }

    /// Forward-only tape: values are computed but no operation record or
    /// backward auxiliaries are kept. Used for evaluation passes.
    pub fn new_no_grad() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.vals[id]
    }

    /// Gradient of the last backward pass with respect to var `id`.
    pub fn grad(&self, id: VarId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Leaf that participates in gradient computation.
    pub fn param(&mut self, t: Tensor) -> VarId {
        self.push(t, true)
    }

    /// Leaf treated as a constant; no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(t, false)
    }

    fn push(&mut self, t: Tensor, requires: bool) -> VarId {
        self.vals.push(t);
        self.requires.push(requires && self.recording);
        self.vals.len() - 1
    }

    fn push_op(&mut self, t: Tensor, requires: bool, make: impl FnOnce(VarId) -> Op) -> VarId {
        let out = self.push(t, requires);
        if self.recording {
            self.ops.push(make(out));
        }
        out
    }

    fn req(&self, id: VarId) -> bool {
        self.requires[id]
    }

    // ---- graph-building operations ----

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.vals[a], &self.vals[b]);
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let req = self.req(a) || self.req(b);
        Ok(self.push_op(Tensor::from_parts(vec![m, n], out), req, |out| Op::Matmul { a, b, out }))
    }

    fn zip_op(
        &mut self,
        a: VarId,
        b: VarId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(VarId) -> Op,
    ) -> Result<VarId> {
        let (ta, tb) = (&self.vals[a], &self.vals[b]);
        // Same shape, or one side a scalar broadcast over the other.
        let data: Vec<f64> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else if tb.numel() == 1 {
            let y = tb.data()[0];
            ta.data().iter().map(|&x| f(x, y)).collect()
        } else if ta.numel() == 1 {
            let x = ta.data()[0];
            tb.data().iter().map(|&y| f(x, y)).collect()
        } else {
            return Err(Error::ShapeMismatch {
                op: name,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        };
        let shape = if ta.numel() >= tb.numel() { ta.shape().to_vec() } else { tb.shape().to_vec() };
        let req = self.req(a) || self.req(b);
        Ok(self.push_op(Tensor::from_parts(shape, data), req, make))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.zip_op(a, b, "add", |x, y| x + y, |out| Op::Add { a, b, out })
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.zip_op(a, b, "sub", |x, y| x - y, |out| Op::Sub { a, b, out })
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.zip_op(a, b, "mul", |x, y| x * y, |out| Op::Mul { a, b, out })
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let t = self.vals[a].scale(c);
        let req = self.req(a);
        self.push_op(t, req, |out| Op::Scale { a, c, out })
    }

    /// Add a length-C bias vector to every row of an R x C tensor.
    pub fn add_bias(&mut self, a: VarId, bias: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.vals[a], &self.vals[bias]);
        if ta.rank() != 2 || tb.numel() != ta.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let c = ta.cols();
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data()[i % c])
            .collect();
        let req = self.req(a) || self.req(bias);
        Ok(self.push_op(Tensor::from_parts(ta.shape().to_vec(), data), req, |out| Op::AddBias { a, bias, out }))
    }

    /// Multiply every row of an R x C tensor elementwise by a length-C vector.
    pub fn mul_cols(&mut self, a: VarId, scale: VarId) -> Result<VarId> {
        let (ta, ts) = (&self.vals[a], &self.vals[scale]);
        if ta.rank() != 2 || ts.numel() != ta.cols() {
            return Err(Error::ShapeMismatch {
                op: "mul_cols",
                left: ta.shape().to_vec(),
                right: ts.shape().to_vec(),
            });
        }
        let c = ta.cols();
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * ts.data()[i % c])
            .collect();
        let req = self.req(a) || self.req(scale);
        Ok(self.push_op(Tensor::from_parts(ta.shape().to_vec(), data), req, |out| Op::MulCols { a, scale, out }))
    }

    fn map_op(&mut self, a: VarId, f: impl Fn(f64) -> f64, make: impl FnOnce(VarId) -> Op) -> VarId {
        let t = self.vals[a].map(f);
        let req = self.req(a);
        self.push_op(t, req, make)
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        self.map_op(a, f64::exp, |out| Op::Exp { a, out })
    }

    pub fn expm1(&mut self, a: VarId) -> VarId {
        self.map_op(a, f64::exp_m1, |out| Op::Expm1 { a, out })
    }

    /// Elementwise (e^z - 1)/z with the limit value 1 below |z| = 1e-8.
    pub fn phi(&mut self, a: VarId) -> VarId {
        self.map_op(a, phi_val, |out| Op::Phi { a, out })
    }

    pub fn softplus(&mut self, a: VarId) -> VarId {
        self.map_op(a, softplus_val, |out| Op::Softplus { a, out })
    }

    pub fn silu(&mut self, a: VarId) -> VarId {
        self.map_op(a, silu_val, |out| Op::Silu { a, out })
    }

    /// Training-mode dropout: zero each element with probability p, scale
    /// survivors by 1/(1-p). In eval mode this is the identity and records
    /// nothing.
    pub fn dropout(&mut self, a: VarId, p: f64, training: bool, rng: &mut impl Rng) -> Result<VarId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.vals[a].numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = Tensor::from_parts(
            self.vals[a].shape().to_vec(),
            self.vals[a].data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        );
        let req = self.req(a);
        Ok(self.push_op(t, req, |out| Op::Dropout { a, out, mask }))
    }

    /// Depthwise causal 1-d convolution. `x` is d x S (channels as rows, time
    /// as columns), `kernel` d x w, `bias` length d. Position t reads only
    /// x[.., t-w+1 ..= t] with zeros to the left of the sequence; the last
    /// kernel tap multiplies the current step.
    pub fn causal_conv1d(&mut self, x: VarId, kernel: VarId, bias: VarId) -> Result<VarId> {
        let (tx, tk, tb) = (&self.vals[x], &self.vals[kernel], &self.vals[bias]);
        let d = tx.rows();
        if tk.rank() != 2 || tk.rows() != d || tk.cols() < 1 {
            return Err(Error::ShapeMismatch {
                op: "causal_conv1d",
                left: tx.shape().to_vec(),
                right: tk.shape().to_vec(),
            });
        }
        if tb.numel() != d {
            return Err(Error::ShapeMismatch {
                op: "causal_conv1d",
                left: vec![d],
                right: tb.shape().to_vec(),
            });
        }
        let (s, w) = (tx.cols(), tk.cols());
        let mut out = vec![0.0; d * s];
        for c in 0..d {
            let xr = &tx.data()[c * s..(c + 1) * s];
            let kr = &tk.data()[c * w..(c + 1) * w];
            let or = &mut out[c * s..(c + 1) * s];
            let b = tb.data()[c];
            for t in 0..s {
                let mut acc = b;
                for (j, &kv) in kr.iter().enumerate() {
                    // tap j reads x at t - (w-1) + j; negative indices are the
                    // zero left-padding
                    let src = t as isize - (w as isize - 1) + j as isize;
                    if src >= 0 {
                        acc += kv * xr[src as usize];
                    }
                }
                or[t] = acc;
            }
        }
        let req = self.req(x) || self.req(kernel) || self.req(bias);
        Ok(self.push_op(Tensor::from_parts(vec![d, s], out), req, |out| Op::CausalConv { x, kernel, bias, out }))
    }

    /// out[t, c*ds+s] = delta[t, c] * a[c, s]: the per-step, per-channel step
    /// size spread over the state transition matrix.
    pub fn delta_outer_a(&mut self, delta: VarId, a: VarId) -> Result<VarId> {
        let (td, ta) = (&self.vals[delta], &self.vals[a]);
        if td.rank() != 2 || ta.rank() != 2 || td.cols() != ta.rows() {
            return Err(Error::ShapeMismatch {
                op: "delta_outer_a",
                left: td.shape().to_vec(),
                right: ta.shape().to_vec(),
            });
        }
        let (steps, di, ds) = (td.rows(), td.cols(), ta.cols());
        let mut out = vec![0.0; steps * di * ds];
        for t in 0..steps {
            for c in 0..di {
                let dv = td.data()[t * di + c];
                let arow = &ta.data()[c * ds..(c + 1) * ds];
                let orow = &mut out[(t * di + c) * ds..(t * di + c + 1) * ds];
                for (o, &av) in orow.iter_mut().zip(arow) {
                    *o = dv * av;
                }
            }
        }
        let req = self.req(delta) || self.req(a);
        Ok(self.push_op(Tensor::from_parts(vec![steps, di * ds], out), req, |out| Op::DeltaOuterA { delta, a, out }))
    }

    /// out[t, c*ds+s] = delta[t, c] * b[t, s]: per-step input map scaled by
    /// the per-channel step size.
    pub fn delta_outer_b(&mut self, delta: VarId, b: VarId) -> Result<VarId> {
        let (td, tb) = (&self.vals[delta], &self.vals[b]);
        if td.rank() != 2 || tb.rank() != 2 || td.rows() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "delta_outer_b",
                left: td.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (steps, di, ds) = (td.rows(), td.cols(), tb.cols());
        let mut out = vec![0.0; steps * di * ds];
        for t in 0..steps {
            let brow = &tb.data()[t * ds..(t + 1) * ds];
            for c in 0..di {
                let dv = td.data()[t * di + c];
                let orow = &mut out[(t * di + c) * ds..(t * di + c + 1) * ds];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = dv * bv;
                }
            }
        }
        let req = self.req(delta) || self.req(b);
        Ok(self.push_op(Tensor::from_parts(vec![steps, di * ds], out), req, |out| Op::DeltaOuterB { delta, b, out }))
    }

    /// Sequential selective-state scan.
    ///
    /// abar, bbar: S x (di*ds); c: S x ds; x: S x di. State update per step:
    /// h[c,s] = abar[t][c,s]*h[c,s] + bbar[t][c,s]*x[t][c], output
    /// y[t][c] = sum_s c[t][s]*h[c,s]. The backward rule runs the adjoint
    /// recurrence from the end of the sequence using the saved states.
    pub fn ssm_scan(&mut self, abar: VarId, bbar: VarId, c: VarId, x: VarId) -> Result<VarId> {
        let (ta, tb, tc, tx) = (&self.vals[abar], &self.vals[bbar], &self.vals[c], &self.vals[x]);
        let steps = tx.rows();
        let di = tx.cols();
        let ds = tc.cols();
        if ta.shape() != [steps, di * ds] || tb.shape() != [steps, di * ds] || tc.rows() != steps {
            return Err(Error::ShapeMismatch {
                op: "ssm_scan",
                left: ta.shape().to_vec(),
                right: vec![steps, di * ds],
            });
        }
        let mut h_all = if self.recording { vec![0.0; steps * di * ds] } else { Vec::new() };
        let mut h = vec![0.0; di * ds];
        let mut y = vec![0.0; steps * di];
        for t in 0..steps {
            let ar = &ta.data()[t * di * ds..(t + 1) * di * ds];
            let br = &tb.data()[t * di * ds..(t + 1) * di * ds];
            let cr = &tc.data()[t * ds..(t + 1) * ds];
            let xr = &tx.data()[t * di..(t + 1) * di];
            for ci in 0..di {
                let xv = xr[ci];
                let hrow = &mut h[ci * ds..(ci + 1) * ds];
                let arow = &ar[ci * ds..(ci + 1) * ds];
                let brow = &br[ci * ds..(ci + 1) * ds];
                let mut acc = 0.0;
                for s in 0..ds {
                    hrow[s] = arow[s] * hrow[s] + brow[s] * xv;
                    acc += cr[s] * hrow[s];
                }
                y[t * di + ci] = acc;
            }
            if self.recording {
                h_all[t * di * ds..(t + 1) * di * ds].copy_from_slice(&h);
            }
        }
        let req = self.req(abar) || self.req(bbar) || self.req(c) || self.req(x);
        Ok(self.push_op(Tensor::from_parts(vec![steps, di], y), req, |out| Op::Scan {
            abar,
            bbar,
            c,
            x,
            out,
            h: h_all,
        }))
    }

    /// Concatenate rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId> {
        let rows = self.vals[parts[0]].rows();
        let mut cols = 0;
        for &p in parts {
            let tp = &self.vals[p];
            if tp.rank() != 2 || tp.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.vals[parts[0]].shape().to_vec(),
                    right: tp.shape().to_vec(),
                });
            }
            cols += tp.cols();
        }
        let mut out = vec![0.0; rows * cols];
        let mut offset = 0;
        for &p in parts {
            let tp = &self.vals[p];
            let pc = tp.cols();
            for r in 0..rows {
                out[r * cols + offset..r * cols + offset + pc]
                    .copy_from_slice(&tp.data()[r * pc..(r + 1) * pc]);
            }
            offset += pc;
        }
        let parts = parts.to_vec();
        let req = parts.iter().any(|&p| self.req(p));
        Ok(self.push_op(Tensor::from_parts(vec![rows, cols], out), req, |out| Op::ConcatCols { parts, out }))
    }

    pub fn slice_cols(&mut self, a: VarId, start: usize, len: usize) -> Result<VarId> {
        let ta = &self.vals[a];
        if ta.rank() != 2 || start + len > ta.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: ta.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let (rows, cols) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len].copy_from_slice(&ta.data()[r * cols + start..r * cols + start + len]);
        }
        let req = self.req(a);
        Ok(self.push_op(Tensor::from_parts(vec![rows, len], out), req, |out| Op::SliceCols { a, start, out }))
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let t = self.vals[a].transpose();
        let req = self.req(a);
        self.push_op(t, req, |out| Op::Transpose { a, out })
    }

    pub fn sum(&mut self, a: VarId) -> VarId {
        let s: f64 = self.vals[a].data().iter().sum();
        let req = self.req(a);
        self.push_op(Tensor::from_parts(vec![1], vec![s]), req, |out| Op::Sum { a, out })
    }

    /// Scalar mean of squared differences against a constant target.
    pub fn mean_sq_diff(&mut self, pred: VarId, target: &Tensor) -> Result<VarId> {
        let tp = &self.vals[pred];
        if tp.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "mean_sq_diff",
                left: tp.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let n = tp.numel() as f64;
        let s: f64 = tp
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| (p - y) * (p - y))
            .sum();
        let target = target.clone();
        let req = self.req(pred);
        Ok(self.push_op(Tensor::from_parts(vec![1], vec![s / n]), req, |out| Op::MeanSqDiff { pred, target, out }))
    }

    // ---- reverse pass ----

    fn accum(&mut self, id: VarId, f: impl FnOnce(&mut [f64], &[Tensor])) {
        if !self.requires[id] {
            return;
        }
        if self.grads[id].is_none() {
            self.grads[id] = Some(vec![0.0; self.vals[id].numel()]);
        }
        let mut g = self.grads[id].take().unwrap();
        f(&mut g, &self.vals);
        self.grads[id] = Some(g);
    }

    /// Populate gradients of `loss` with respect to every requires-grad leaf.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.vals[loss].numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: self.vals[loss].shape().to_vec(),
                right: vec![1],
            });
        }
        self.grads = vec![None; self.vals.len()];
        self.grads[loss] = Some(vec![1.0]);

        let ops = std::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            self.backward_op(op);
        }
        self.ops = ops;
        Ok(())
    }

    fn backward_op(&mut self, op: &Op) {
        // An op with no gradient flowing into its output contributes nothing.
        macro_rules! out_grad {
            ($out:expr) => {
                match self.grads[$out].as_ref() {
                    Some(g) => g.clone(),
                    None => return,
                }
            };
        }
        match op {
            Op::Matmul { a, b, out } => {
                let g = out_grad!(*out);
                let (m, k, n) = (self.vals[*a].rows(), self.vals[*a].cols(), self.vals[*b].cols());
                self.accum(*a, |ga, vals| matmul_g_bt_accum(&g, vals[*b].data(), ga, m, k, n));
                self.accum(*b, |gb, vals| matmul_at_b_accum(vals[*a].data(), &g, gb, m, k, n));
            }
            Op::Add { a, b, out } => {
                let g = out_grad!(*out);
                self.accum(*a, |ga, _| broadcast_accum(ga, &g, 1.0));
                self.accum(*b, |gb, _| broadcast_accum(gb, &g, 1.0));
            }
            Op::Sub { a, b, out } => {
                let g = out_grad!(*out);
                self.accum(*a, |ga, _| broadcast_accum(ga, &g, 1.0));
                self.accum(*b, |gb, _| broadcast_accum(gb, &g, -1.0));
            }
            Op::Mul { a, b, out } => {
                let g = out_grad!(*out);
                self.accum(*a, |ga, vals| {
                    let (vb, va_len) = (vals[*b].data(), vals[*a].numel());
                    if va_len == g.len() {
                        for (i, gi) in ga.iter_mut().enumerate() {
                            *gi += g[i] * if vb.len() == 1 { vb[0] } else { vb[i] };
                        }
                    } else {
                        // a is the scalar side
                        ga[0] += g.iter().zip(vb).map(|(&gv, &bv)| gv * bv).sum::<f64>();
                    }
                });
                self.accum(*b, |gb, vals| {
                    let (va, vb_len) = (vals[*a].data(), vals[*b].numel());
                    if vb_len == g.len() {
                        for (i, gi) in gb.iter_mut().enumerate() {
                            *gi += g[i] * if va.len() == 1 { va[0] } else { va[i] };
                        }
                    } else {
                        gb[0] += g.iter().zip(va).map(|(&gv, &av)| gv * av).sum::<f64>();
                    }
                });
            }
            Op::Scale { a, c, out } => {
                let g = out_grad!(*out);
                self.accum(*a, |ga, _| {
                    for (gi, &gv) in ga.iter_mut().zip(&g) {
                        *gi += c * gv;
                    }
                });
            }
            Op::AddBias { a, bias, out } => {
                let g = out_grad!(*out);
                let c = self.vals[*a].cols();
                self.accum(*a, |ga, _| broadcast_accum(ga, &g, 1.0));
                self.accum(*bias, |gb, _| {
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % c] += gv;
                    }
                });
            }
            Op::MulCols { a, scale, out } => {
                let g = out_grad!(*out);
                let c = self.vals[*a].cols();
                self.accum(*a, |ga, vals| {
                    let sv = vals[*scale].data();
                    for (i, gi) in ga.iter_mut().enumerate() {
                        *gi += g[i] * sv[i % c];
                    }
                });
                self.accum(*scale, |gs, vals| {
                    let av = vals[*a].data();
                    for (i, &gv) in g.iter().enumerate() {
                        gs[i % c] += gv * av[i];
                    }
                });
            }
            Op::Exp { a, out } => {
                let g = out_grad!(*out);
                self.accum(*a, |ga, vals| {
                    for ((gi, &gv), &ov) in ga.iter_mut().zip(&g).zip(vals[*out].data()) {
                        *gi += gv * ov;
                    }
                });
            }
            Op::Expm1 { a, out } => {
                let g = out_grad!(*out);
                self.accum(*a, |ga, vals| {
                    for ((gi, &gv), &ov) in ga.iter_mut().zip(&g).zip(vals[*out].data()) {
                        *gi += gv * (ov + 1.0);
                    }
                });
            }
            Op::Phi { a, out } => {
                let g = out_grad!(*out);
                self.accum(*a, |ga, vals| {
                    let (za, ph) = (vals[*a].data(), vals[*out].data());
                    for i in 0..ga.len() {
                        ga[i] += g[i] * phi_grad(za[i], ph[i]);
                    }
                });
            }
            Op::Softplus { a, out } => {
                let g = out_grad!(*out);
                self.accum(*a, |ga, vals| {
                    for ((gi, &gv), &zv) in ga.iter_mut().zip(&g).zip(vals[*a].data()) {
                        *gi += gv * sigmoid(zv);
                    }
                });
            }
            Op::Silu { a, out } => {
                let g = out_grad!(*out);
                self.accum(*a, |ga, vals| {
                    for ((gi, &gv), &zv) in ga.iter_mut().zip(&g).zip(vals[*a].data()) {
                        let s = sigmoid(zv);
                        *gi += gv * s * (1.0 + zv * (1.0 - s));
                    }
                });
            }
            Op::Dropout { a, out, mask } => {
                let g = out_grad!(*out);
                self.accum(*a, |ga, _| {
                    for ((gi, &gv), &mv) in ga.iter_mut().zip(&g).zip(mask) {
                        *gi += gv * mv;
                    }
                });
            }
            Op::CausalConv { x, kernel, bias, out } => {
                let g = out_grad!(*out);
                let (d, s) = (self.vals[*x].rows(), self.vals[*x].cols());
                let w = self.vals[*kernel].cols();
                self.accum(*x, |gx, vals| {
                    let kd = vals[*kernel].data();
                    for c in 0..d {
                        let gr = &g[c * s..(c + 1) * s];
                        let kr = &kd[c * w..(c + 1) * w];
                        let gxr = &mut gx[c * s..(c + 1) * s];
                        for t in 0..s {
                            let gv = gr[t];
                            for (j, &kv) in kr.iter().enumerate() {
                                let src = t as isize - (w as isize - 1) + j as isize;
                                if src >= 0 {
                                    gxr[src as usize] += gv * kv;
                                }
                            }
                        }
                    }
                });
                self.accum(*kernel, |gk, vals| {
                    let xd = vals[*x].data();
                    for c in 0..d {
                        let gr = &g[c * s..(c + 1) * s];
                        let xr = &xd[c * s..(c + 1) * s];
                        let gkr = &mut gk[c * w..(c + 1) * w];
                        for t in 0..s {
                            let gv = gr[t];
                            for (j, gkv) in gkr.iter_mut().enumerate() {
                                let src = t as isize - (w as isize - 1) + j as isize;
                                if src >= 0 {
                                    *gkv += gv * xr[src as usize];
                                }
                            }
                        }
                    }
                });
                self.accum(*bias, |gb, _| {
                    for c in 0..d {
                        gb[c] += g[c * s..(c + 1) * s].iter().sum::<f64>();
                    }
                });
            }
            Op::DeltaOuterA { delta, a, out } => {
                let g = out_grad!(*out);
                let (steps, di) = (self.vals[*delta].rows(), self.vals[*delta].cols());
                let ds = self.vals[*a].cols();
                self.accum(*delta, |gd, vals| {
                    let ad = vals[*a].data();
                    for t in 0..steps {
                        for c in 0..di {
                            let gr = &g[(t * di + c) * ds..(t * di + c + 1) * ds];
                            let ar = &ad[c * ds..(c + 1) * ds];
                            gd[t * di + c] += gr.iter().zip(ar).map(|(&gv, &av)| gv * av).sum::<f64>();
                        }
                    }
                });
                self.accum(*a, |ga, vals| {
                    let dd = vals[*delta].data();
                    for t in 0..steps {
                        for c in 0..di {
                            let dv = dd[t * di + c];
                            let gr = &g[(t * di + c) * ds..(t * di + c + 1) * ds];
                            let gar = &mut ga[c * ds..(c + 1) * ds];
                            for (gav, &gv) in gar.iter_mut().zip(gr) {
                                *gav += gv * dv;
                            }
                        }
                    }
                });
            }
            Op::DeltaOuterB { delta, b, out } => {
                let g = out_grad!(*out);
                let (steps, di) = (self.vals[*delta].rows(), self.vals[*delta].cols());
                let ds = self.vals[*b].cols();
                self.accum(*delta, |gd, vals| {
                    let bd = vals[*b].data();
                    for t in 0..steps {
                        let br = &bd[t * ds..(t + 1) * ds];
                        for c in 0..di {
                            let gr = &g[(t * di + c) * ds..(t * di + c + 1) * ds];
                            gd[t * di + c] += gr.iter().zip(br).map(|(&gv, &bv)| gv * bv).sum::<f64>();
                        }
                    }
                });
                self.accum(*b, |gb, vals| {
                    let dd = vals[*delta].data();
                    for t in 0..steps {
                        let gbr = &mut gb[t * ds..(t + 1) * ds];
                        for c in 0..di {
                            let dv = dd[t * di + c];
                            let gr = &g[(t * di + c) * ds..(t * di + c + 1) * ds];
                            for (gbv, &gv) in gbr.iter_mut().zip(gr) {
                                *gbv += gv * dv;
                            }
                        }
                    }
                });
            }
            Op::Scan { abar, bbar, c, x, out, h } => {
                let g = out_grad!(*out);
                let (steps, di) = (self.vals[*x].rows(), self.vals[*x].cols());
                let ds = self.vals[*c].cols();
                let (ad, bd, cd, xd) = (
                    self.vals[*abar].data().to_vec(),
                    self.vals[*bbar].data().to_vec(),
                    self.vals[*c].data().to_vec(),
                    self.vals[*x].data().to_vec(),
                );
                // Adjoint recurrence: lambda_t = g_t (x) C_t + abar_{t+1} . lambda_{t+1}
                let mut lam = vec![0.0; di * ds];
                let mut g_abar = vec![0.0; steps * di * ds];
                let mut g_bbar = vec![0.0; steps * di * ds];
                let mut g_c = vec![0.0; steps * ds];
                let mut g_x = vec![0.0; steps * di];
                for t in (0..steps).rev() {
                    let cr = &cd[t * ds..(t + 1) * ds];
                    for ci in 0..di {
                        let gy = g[t * di + ci];
                        let base = (t * di + ci) * ds;
                        let lrow = &mut lam[ci * ds..(ci + 1) * ds];
                        if t + 1 < steps {
                            let anext = &ad[((t + 1) * di + ci) * ds..((t + 1) * di + ci + 1) * ds];
                            for (l, &av) in lrow.iter_mut().zip(anext) {
                                *l *= av;
                            }
                        }
                        for (s, l) in lrow.iter_mut().enumerate() {
                            *l += gy * cr[s];
                        }
                        let xv = xd[t * di + ci];
                        let brow = &bd[base..base + ds];
                        let mut gx_acc = 0.0;
                        if t > 0 {
                            let hprev = &h[((t - 1) * di + ci) * ds..((t - 1) * di + ci + 1) * ds];
                            for s in 0..ds {
                                g_abar[base + s] = lrow[s] * hprev[s];
                                g_bbar[base + s] = lrow[s] * xv;
                                gx_acc += lrow[s] * brow[s];
                            }
                        } else {
                            // h_{-1} = 0, so abar at t=0 receives no gradient
                            for s in 0..ds {
                                g_bbar[base + s] = lrow[s] * xv;
                                gx_acc += lrow[s] * brow[s];
                            }
                        }
                        g_x[t * di + ci] = gx_acc;
                        let hcur = &h[base..base + ds];
                        for s in 0..ds {
                            g_c[t * ds + s] += gy * hcur[s];
                        }
                    }
                }
                self.accum(*abar, |ga, _| broadcast_accum(ga, &g_abar, 1.0));
                self.accum(*bbar, |gb, _| broadcast_accum(gb, &g_bbar, 1.0));
                self.accum(*c, |gc, _| broadcast_accum(gc, &g_c, 1.0));
                self.accum(*x, |gx, _| broadcast_accum(gx, &g_x, 1.0));
            }
            Op::ConcatCols { parts, out } => {
                let g = out_grad!(*out);
                let rows = self.vals[*out].rows();
                let cols = self.vals[*out].cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.vals[p].cols();
                    self.accum(p, |gp, _| {
                        for r in 0..rows {
                            let src = &g[r * cols + offset..r * cols + offset + pc];
                            for (gv, &sv) in gp[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                *gv += sv;
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::SliceCols { a, start, out } => {
                let g = out_grad!(*out);
                let (rows, len) = (self.vals[*out].rows(), self.vals[*out].cols());
                let cols = self.vals[*a].cols();
                self.accum(*a, |ga, _| {
                    for r in 0..rows {
                        let dst = &mut ga[r * cols + start..r * cols + start + len];
                        for (gv, &sv) in dst.iter_mut().zip(&g[r * len..(r + 1) * len]) {
                            *gv += sv;
                        }
                    }
                });
            }
            Op::Transpose { a, out } => {
                let g = out_grad!(*out);
                let (r, c) = (self.vals[*out].rows(), self.vals[*out].cols());
                self.accum(*a, |ga, _| {
                    // out is c x r transposed back onto a's r x c... out here is
                    // r x c, a is c x r
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Sum { a, out } => {
                let g = out_grad!(*out);
                self.accum(*a, |ga, _| {
                    for gv in ga.iter_mut() {
                        *gv += g[0];
                    }
                });
            }
            Op::MeanSqDiff { pred, target, out } => {
                let g = out_grad!(*out);
                let n = target.numel() as f64;
                self.accum(*pred, |gp, vals| {
                    for ((gv, &pv), &yv) in gp.iter_mut().zip(vals[*pred].data()).zip(target.data()) {
                        *gv += g[0] * 2.0 * (pv - yv) / n;
                    }
                });
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// ga += scale * g where either side may be the larger (same length here; the
/// scalar-broadcast add/sub case lands with ga shorter).
fn broadcast_accum(ga: &mut [f64], g: &[f64], scale: f64) {
    if ga.len() == g.len() {
        for (a, &b) in ga.iter_mut().zip(g) {
            *a += scale * b;
        }
    } else {
        debug_assert_eq!(ga.len(), 1);
        ga[0] += scale * g.iter().sum::<f64>();
    }
}

/// Max relative error between analytic gradients and central finite
/// differences for a scalar-valued tape function of one tensor.
///
/// The builder must be deterministic: it is re-run for every perturbed
/// evaluation. Error per element is |analytic - numeric| divided by
/// max(1e-8, |analytic| + |numeric|).
pub fn grad_check<F>(build: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, VarId) -> Result<VarId>,
{
    grad_check_multi(|tape, ids| build(tape, ids[0]), std::slice::from_ref(x), eps)
}

/// Multi-input version of [`grad_check`]; checks every element of every input.
pub fn grad_check_multi<F>(build: F, xs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    if eps <= 0.0 {
        return Err(Error::Config(format!("grad_check eps must be positive, got {eps}")));
    }
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<VarId> = xs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            left: tape.value(loss).shape().to_vec(),
            right: vec![1],
        });
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.value(id).numel()]))
        .collect();

    let eval = |xs_mod: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<VarId> = xs_mod.iter().map(|x| t.param(x.clone())).collect();
        let l = build(&mut t, &ids)?;
        Ok(t.value(l).data()[0])
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = xs.to_vec();
    for (pi, x) in xs.iter().enumerate() {
        for e in 0..x.numel() {
            let orig = x.data()[e];
            work[pi].data_mut()[e] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[e] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[pi][e];
            let err = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Directional variant of [`grad_check_multi`] for deep compositions.
///
/// Per-element central differences bottom out at roundoff of the full loss
/// value, so elements whose true derivative is below |loss| * 1e-16 / eps can
/// never be resolved and dominate the per-element maximum. Comparing the
/// derivative along random unit directions instead keeps both sides at the
/// scale of the whole gradient, which finite differences resolve to many
/// digits, while a systematic backward error on any non-negligible component
/// still shifts the inner product by its full share.
pub fn grad_check_directional<F>(
    build: F,
    xs: &[Tensor],
    eps: f64,
    dirs: usize,
    rng: &mut impl Rng,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    if eps <= 0.0 {
        return Err(Error::Config(format!("grad_check eps must be positive, got {eps}")));
    }
    if dirs == 0 {
        return Err(Error::Config("grad_check needs at least one direction".into()));
    }
    let mut tape = Tape::new();
    let ids: Vec<VarId> = xs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            left: tape.value(loss).shape().to_vec(),
            right: vec![1],
        });
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.value(id).numel()]))
        .collect();

    let eval = |xs_mod: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<VarId> = xs_mod.iter().map(|x| t.param(x.clone())).collect();
        let l = build(&mut t, &ids)?;
        Ok(t.value(l).data()[0])
    };

    let mut worst = 0.0f64;
    for _ in 0..dirs {
        let dir: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| (0..x.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let norm = dir.iter().flat_map(|d| d.iter().map(|v| v * v)).sum::<f64>().sqrt();
        let shifted = |sign: f64| -> Vec<Tensor> {
            xs.iter()
                .zip(&dir)
                .map(|(x, d)| {
                    let mut t = x.clone();
                    for (tv, dv) in t.data_mut().iter_mut().zip(d) {
                        *tv += sign * eps * dv / norm;
                    }
                    t
                })
                .collect()
        };
        let numeric = (eval(&shifted(1.0))? - eval(&shifted(-1.0))?) / (2.0 * eps);
        let a: f64 = analytic
            .iter()
            .zip(&dir)
            .flat_map(|(g, d)| g.iter().zip(d).map(|(gv, dv)| gv * dv / norm))
            .sum();
        let err = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
