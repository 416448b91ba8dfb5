//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in creation order, so the reverse sweep
//! simply walks the node list backwards. Resetting a tape invalidates every
//! [`Var`] handed out before the reset.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{NumericsError, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(dim: usize) -> Self {
        Self {
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, usize),
    ScaleConst(usize, f64),
    AddConst(usize),
    Relu(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Sum(usize),
    Reshape(usize),
    Transpose(usize),
    SegmentSum(usize, Vec<usize>),
    Gather(usize, Vec<usize>),
    SoftmaxRows(usize),
    Clamp(usize, f64, f64),
    ConcatCols(usize, usize),
    ConcatRows(Vec<usize>),
    L1(usize, Vec<f64>),
    KlGaussian { mu: usize, sigma: usize, prior: f64 },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation record.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`.
    ///
    /// Every `requires_grad` leaf has an entry (zeros when unreachable).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize), NumericsError> {
    t.dims2().ok_or_else(|| NumericsError::ShapeMismatch {
        op,
        left: t.shape().to_vec(),
        right: vec![],
    })
}

/// `c = a·b + beta·c` for strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides and extents describe in-bounds views of `a`, `b`, `c`
    // (checked by the callers' shape validation); `c` does not alias `a`/`b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Drops every recorded node; previously issued vars become dead.
    pub fn reset(&mut self) {
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor, NumericsError> {
        let i = self.index(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool, NumericsError> {
        let i = self.index(v)?;
        Ok(self.nodes[i].requires_grad)
    }

    fn index(&self, v: Var) -> Result<usize, NumericsError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(NumericsError::DeadTape);
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        let (m, k) = require_matrix("matmul", ta)?;
        let (k2, n) = require_matrix("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), k, 1, tb.data(), n, 1, 0.0, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(ia, ib), &[ia, ib]))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, op(ia, ib), &[ia, ib]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Adds the vector `b` (length `d`) to every row of `x` (`n×d`).
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, NumericsError> {
        let (ix, ib) = (self.index(x)?, self.index(b)?);
        let (tx, tb) = (self.val(ix), self.val(ib));
        let (_, d) = require_matrix("add_row", tx)?;
        if tb.rank() != 1 || tb.len() != d {
            return Err(mismatch("add_row", tx, tb));
        }
        let data = tx
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(tb.data()).map(|(a, b)| a + b))
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRow(ix, ib), &[ix, ib]))
    }

    /// Multiplies `x` by the one-element tensor `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var, NumericsError> {
        let (ix, is) = (self.index(x)?, self.index(s)?);
        let (tx, ts) = (self.val(ix), self.val(is));
        let factor = ts.item().ok_or_else(|| mismatch("scale", tx, ts))?;
        let data = tx.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Scale(ix, is), &[ix, is]))
    }

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(usize) -> Op,
    ) -> Result<Var, NumericsError> {
        let ix = self.index(x)?;
        let tx = self.val(ix);
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, op(ix), &[ix]))
    }

    pub fn scale_const(&mut self, x: Var, c: f64) -> Result<Var, NumericsError> {
        self.unary(x, |v| v * c, |i| Op::ScaleConst(i, c))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var, NumericsError> {
        self.unary(x, |v| v + c, Op::AddConst)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, |v| v.max(0.0), Op::Relu)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, softplus, Op::Softplus)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, f64::exp, Op::Exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, f64::ln, Op::Log)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, f64::sqrt, Op::Sqrt)
    }

    /// Pointwise clamp to `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, NumericsError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(NumericsError::InvalidBounds { lo, hi });
        }
        self.unary(x, |v| v.max(lo).min(hi), |i| Op::Clamp(i, lo, hi))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let ix = self.index(x)?;
        let total = self.val(ix).data().iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum(ix), &[ix]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let ix = self.index(x)?;
        let value = self.val(ix).clone().reshaped(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(ix), &[ix]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let ix = self.index(x)?;
        let tx = self.val(ix);
        let (r, c) = require_matrix("transpose", tx)?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = tx.data()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], data)?;
        Ok(self.push(value, Op::Transpose(ix), &[ix]))
    }

    /// `out[s] = Σ_{i: ids[i] = s} x[i]`; empty segments are zero rows.
    pub fn segment_sum(
        &mut self,
        x: Var,
        ids: &[usize],
        num_segments: usize,
    ) -> Result<Var, NumericsError> {
        let ix = self.index(x)?;
        let tx = self.val(ix);
        let (n, d) = require_matrix("segment_sum", tx)?;
        if ids.len() != n {
            return Err(NumericsError::ShapeMismatch {
                op: "segment_sum",
                left: tx.shape().to_vec(),
                right: vec![ids.len()],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&s| s >= num_segments) {
            return Err(NumericsError::IndexOutOfRange {
                index: bad,
                bound: num_segments,
            });
        }
        let mut out = vec![0.0; num_segments * d];
        for (row, &s) in tx.data().chunks(d.max(1)).zip(ids) {
            for (o, v) in out[s * d..(s + 1) * d].iter_mut().zip(row) {
                *o += v;
            }
        }
        let value = Tensor::new(vec![num_segments, d], out)?;
        Ok(self.push(value, Op::SegmentSum(ix, ids.to_vec()), &[ix]))
    }

    /// Row gather `out[i] = table[codes[i]]`.
    pub fn embedding_lookup(&mut self, table: Var, codes: &[usize]) -> Result<Var, NumericsError> {
        let it = self.index(table)?;
        let tt = self.val(it);
        let (v, d) = require_matrix("embedding_lookup", tt)?;
        if let Some(&bad) = codes.iter().find(|&&c| c >= v) {
            return Err(NumericsError::IndexOutOfRange { index: bad, bound: v });
        }
        let mut out = Vec::with_capacity(codes.len() * d);
        for &c in codes {
            out.extend_from_slice(&tt.data()[c * d..(c + 1) * d]);
        }
        let value = Tensor::new(vec![codes.len(), d], out)?;
        Ok(self.push(value, Op::Gather(it, codes.to_vec()), &[it]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let ix = self.index(x)?;
        let tx = self.val(ix);
        let (_, k) = require_matrix("softmax_rows", tx)?;
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(k.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(value, Op::SoftmaxRows(ix), &[ix]))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        let (ra, ca) = require_matrix("concat_cols", ta)?;
        let (rb, cb) = require_matrix("concat_cols", tb)?;
        if ra != rb {
            return Err(mismatch("concat_cols", ta, tb));
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::new(vec![ra, ca + cb], out)?;
        Ok(self.push(value, Op::ConcatCols(ia, ib), &[ia, ib]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let idx = parts
            .iter()
            .map(|&p| self.index(p))
            .collect::<Result<Vec<_>, _>>()?;
        let first = idx.first().ok_or(NumericsError::EmptyInput)?;
        let (_, cols) = require_matrix("concat_rows", self.val(*first))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &i in &idx {
            let t = self.val(i);
            let (r, c) = require_matrix("concat_rows", t)?;
            if c != cols {
                return Err(mismatch("concat_rows", self.val(*first), t));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(value, Op::ConcatRows(idx.clone()), &idx))
    }

    /// Inverted dropout: zeroes entries with probability `rate`, rescales the rest.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        rng: &mut R,
    ) -> Result<Var, NumericsError> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let shape = self.value(x)?.shape().to_vec();
        let keep = 1.0 / (1.0 - rate);
        let n = shape.iter().product();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, mask)
    }

    /// Mean absolute error against a fixed target.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var, NumericsError> {
        let ip = self.index(pred)?;
        let tp = self.val(ip);
        if tp.len() != target.len() {
            return Err(mismatch("l1_loss", tp, target));
        }
        if tp.is_empty() {
            return Err(NumericsError::EmptyInput);
        }
        let n = tp.len() as f64;
        let loss = tp
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::L1(ip, target.data().to_vec()),
            &[ip],
        ))
    }

    /// KL divergence from `N(mu, sigma²)` to `N(0, prior_sigma²)`, summed over entries.
    pub fn kl_gaussian(
        &mut self,
        mu: Var,
        sigma: Var,
        prior_sigma: f64,
    ) -> Result<Var, NumericsError> {
        let (im, is) = (self.index(mu)?, self.index(sigma)?);
        let (tm, ts) = (self.val(im), self.val(is));
        if tm.shape() != ts.shape() {
            return Err(mismatch("kl_gaussian", tm, ts));
        }
        if !(prior_sigma > 0.0) || ts.data().iter().any(|&s| !(s > 0.0)) {
            return Err(NumericsError::NonPositiveSigma);
        }
        let p2 = prior_sigma * prior_sigma;
        let kl = tm
            .data()
            .iter()
            .zip(ts.data())
            .map(|(&m, &s)| (prior_sigma / s).ln() + (s * s + m * m) / (2.0 * p2) - 0.5)
            .sum();
        Ok(self.push(
            Tensor::scalar(kl),
            Op::KlGaussian {
                mu: im,
                sigma: is,
                prior: prior_sigma,
            },
            &[im, is],
        ))
    }

    /// Batch normalization over rows, followed by the affine `gamma·x̂ + beta`.
    ///
    /// In train mode the batch statistics (biased variance) are used and the
    /// updated running statistics are returned; eval mode uses `state`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState,
        mode: Mode,
    ) -> Result<(Var, Option<BatchNormState>), NumericsError> {
        let (ix, ig, ib) = (self.index(x)?, self.index(gamma)?, self.index(beta)?);
        let tx = self.val(ix);
        let (n, d) = require_matrix("batch_norm", tx)?;
        for t in [self.val(ig), self.val(ib)] {
            if t.len() != d {
                return Err(mismatch("batch_norm", tx, t));
            }
        }
        if state.running_mean.len() != d || state.running_var.len() != d {
            return Err(NumericsError::ShapeMismatch {
                op: "batch_norm",
                left: tx.shape().to_vec(),
                right: vec![state.running_mean.len()],
            });
        }
        let min_rows = if mode == Mode::Train { 2 } else { 1 };
        if n < min_rows {
            return Err(NumericsError::BatchTooSmall { rows: n, required: min_rows });
        }

        let (mean, var, updated) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; d];
                for row in tx.data().chunks(d) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; d];
                for row in tx.data().chunks(d) {
                    for j in 0..d {
                        let c = row[j] - mean[j];
                        var[j] += c * c;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let blend = |old: &[f64], new: &[f64]| -> Vec<f64> {
                    old.iter()
                        .zip(new)
                        .map(|(o, b)| (1.0 - BATCH_NORM_MOMENTUM) * o + BATCH_NORM_MOMENTUM * b)
                        .collect()
                };
                let updated = BatchNormState {
                    running_mean: blend(&state.running_mean, &mean),
                    running_var: blend(&state.running_var, &var),
                };
                (mean, var, Some(updated))
            }
            Mode::Eval => (state.running_mean.clone(), state.running_var.clone(), None),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let (g, b) = (self.val(ig).data(), self.val(ib).data());
        let mut xhat = Vec::with_capacity(n * d);
        let mut out = Vec::with_capacity(n * d);
        for row in tx.data().chunks(d) {
            for j in 0..d {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        let var = self.push(
            value,
            Op::BatchNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            &[ix, ig, ib],
        );
        Ok((var, updated))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let il = self.index(loss)?;
        if self.val(il).len() != 1 {
            return Err(NumericsError::NotScalar {
                shape: self.val(il).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[il] = Some(Tensor::full(self.val(il).shape(), 1.0));

        for i in (0..=il).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, g.data(), lower);
        }

        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if matches!(node.op, Op::Leaf) && node.requires_grad && g.is_none() {
                *g = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        // accumulate into input `j` unless it is constant
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[j].requires_grad {
                return;
            }
            let slot = grads[j].get_or_insert_with(|| Tensor::zeros(nodes[j].value.shape()));
            f(slot.data_mut());
        };
        let value = |j: usize| nodes[j].value.data();
        let out = node.value.data();

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = nodes[a].value.dims2().expect("matrix");
                let (_, n) = nodes[b].value.dims2().expect("matrix");
                // dA = dC·Bᵀ
                acc(a, &mut |ga| gemm(m, n, k, g, n, 1, value(b), 1, n, 1.0, ga));
                // dB = Aᵀ·dC
                acc(b, &mut |gb| gemm(k, m, n, value(a), 1, k, g, n, 1, 1.0, gb));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += d));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, d)| *x += d));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += d));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d));
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (value(a), value(b));
                acc(a, &mut |ga| {
                    for ((x, d), y) in ga.iter_mut().zip(g).zip(vb) {
                        *x += d * y;
                    }
                });
                acc(b, &mut |gb| {
                    for ((x, d), y) in gb.iter_mut().zip(g).zip(va) {
                        *x += d * y;
                    }
                });
            }
            &Op::AddRow(x, b) => {
                acc(x, &mut |gx| gx.iter_mut().zip(g).for_each(|(v, d)| *v += d));
                let d = nodes[b].value.len();
                acc(b, &mut |gb| {
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(v, r)| *v += r);
                    }
                });
            }
            &Op::Scale(x, s) => {
                let factor = value(s)[0];
                acc(x, &mut |gx| gx.iter_mut().zip(g).for_each(|(v, d)| *v += d * factor));
                let dot: f64 = g.iter().zip(value(x)).map(|(d, v)| d * v).sum();
                acc(s, &mut |gs| gs[0] += dot);
            }
            &Op::ScaleConst(x, c) => {
                acc(x, &mut |gx| gx.iter_mut().zip(g).for_each(|(v, d)| *v += d * c));
            }
            &Op::AddConst(x) | &Op::Reshape(x) => {
                acc(x, &mut |gx| gx.iter_mut().zip(g).for_each(|(v, d)| *v += d));
            }
            &Op::Relu(x) => {
                let vx = value(x);
                acc(x, &mut |gx| {
                    for ((v, d), &xi) in gx.iter_mut().zip(g).zip(vx) {
                        if xi > 0.0 {
                            *v += d;
                        }
                    }
                });
            }
            &Op::Softplus(x) => {
                let vx = value(x);
                acc(x, &mut |gx| {
                    for ((v, d), &xi) in gx.iter_mut().zip(g).zip(vx) {
                        *v += d * sigmoid(xi);
                    }
                });
            }
            &Op::Exp(x) => {
                acc(x, &mut |gx| {
                    for ((v, d), y) in gx.iter_mut().zip(g).zip(out) {
                        *v += d * y;
                    }
                });
            }
            &Op::Log(x) => {
                let vx = value(x);
                acc(x, &mut |gx| {
                    for ((v, d), xi) in gx.iter_mut().zip(g).zip(vx) {
                        *v += d / xi;
                    }
                });
            }
            &Op::Sqrt(x) => {
                acc(x, &mut |gx| {
                    for ((v, d), y) in gx.iter_mut().zip(g).zip(out) {
                        *v += d * 0.5 / y;
                    }
                });
            }
            &Op::Clamp(x, lo, hi) => {
                let vx = value(x);
                acc(x, &mut |gx| {
                    for ((v, d), &xi) in gx.iter_mut().zip(g).zip(vx) {
                        if xi > lo && xi < hi {
                            *v += d;
                        }
                    }
                });
            }
            &Op::Sum(x) => {
                let d = g[0];
                acc(x, &mut |gx| gx.iter_mut().for_each(|v| *v += d));
            }
            &Op::Transpose(x) => {
                let (r, c) = nodes[x].value.dims2().expect("matrix");
                acc(x, &mut |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::SegmentSum(x, ids) => {
                let d = node.value.dims2().expect("matrix").1;
                acc(*x, &mut |gx| {
                    for (row, &s) in gx.chunks_mut(d.max(1)).zip(ids) {
                        row.iter_mut()
                            .zip(&g[s * d..(s + 1) * d])
                            .for_each(|(v, u)| *v += u);
                    }
                });
            }
            Op::Gather(t, codes) => {
                let d = node.value.dims2().expect("matrix").1;
                acc(*t, &mut |gt| {
                    for (row, &c) in g.chunks(d.max(1)).zip(codes) {
                        gt[c * d..(c + 1) * d]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(v, u)| *v += u);
                    }
                });
            }
            &Op::SoftmaxRows(x) => {
                let k = node.value.dims2().expect("matrix").1;
                acc(x, &mut |gx| {
                    for ((gr, dy), y) in gx.chunks_mut(k).zip(g.chunks(k)).zip(out.chunks(k)) {
                        let dot: f64 = dy.iter().zip(y).map(|(a, b)| a * b).sum();
                        for j in 0..k {
                            gr[j] += y[j] * (dy[j] - dot);
                        }
                    }
                });
            }
            &Op::ConcatCols(a, b) => {
                let (r, ca) = nodes[a].value.dims2().expect("matrix");
                let cb = nodes[b].value.dims2().expect("matrix").1;
                let w = ca + cb;
                acc(a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..ca {
                            ga[i * ca + j] += g[i * w + j];
                        }
                    }
                });
                acc(b, &mut |gb| {
                    for i in 0..r {
                        for j in 0..cb {
                            gb[i * cb + j] += g[i * w + ca + j];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p].value.len();
                    let slice = &g[offset..offset + len];
                    acc(p, &mut |gp| gp.iter_mut().zip(slice).for_each(|(v, u)| *v += u));
                    offset += len;
                }
            }
            Op::L1(p, target) => {
                let n = target.len() as f64;
                let scale = g[0] / n;
                let vp = value(*p);
                acc(*p, &mut |gp| {
                    for ((v, &pi), &ti) in gp.iter_mut().zip(vp).zip(target) {
                        let diff = pi - ti;
                        if diff > 0.0 {
                            *v += scale;
                        } else if diff < 0.0 {
                            *v -= scale;
                        }
                    }
                });
            }
            &Op::KlGaussian { mu, sigma, prior } => {
                let p2 = prior * prior;
                let scale = g[0];
                let vm = value(mu);
                let vs = value(sigma);
                acc(mu, &mut |gm| {
                    gm.iter_mut().zip(vm).for_each(|(v, m)| *v += scale * m / p2);
                });
                acc(sigma, &mut |gs| {
                    gs.iter_mut()
                        .zip(vs)
                        .for_each(|(v, s)| *v += scale * (s / p2 - 1.0 / s));
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let d = inv_std.len();
                let n = xhat.len() / d.max(1);
                let gam = value(*gamma);
                let mut sum_dy = vec![0.0; d];
                let mut sum_dy_xhat = vec![0.0; d];
                for (dy, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        sum_dy[j] += dy[j];
                        sum_dy_xhat[j] += dy[j] * xh[j];
                    }
                }
                acc(*gamma, &mut |gg| {
                    gg.iter_mut().zip(&sum_dy_xhat).for_each(|(v, s)| *v += s);
                });
                acc(*beta, &mut |gb| gb.iter_mut().zip(&sum_dy).for_each(|(v, s)| *v += s));
                acc(*x, &mut |gx| {
                    let nf = n as f64;
                    for ((gr, dy), xh) in gx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            let scale = gam[j] * inv_std[j];
                            if *train {
                                gr[j] += scale / nf
                                    * (nf * dy[j] - sum_dy[j] - xh[j] * sum_dy_xhat[j]);
                            } else {
                                gr[j] += scale * dy[j];
                            }
                        }
                    }
                });
            }
        }
    }
}
