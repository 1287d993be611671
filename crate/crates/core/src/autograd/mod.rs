//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse and returns gradients for all
//! nodes that depend on a [`Graph::variable`]. Scalar losses with closed-form
//! gradients (the alignment losses) enter the tape through
//! [`Graph::scalar_op`], which stores their precomputed input gradients.

pub mod kernels;

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub use kernels::ConvGeom;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    WeightedSum(Vec<(Var, f64)>),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu(Var),
    Cos(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanTime(Var),
    Softmax(Var),
    LogSoftmax(Var),
    GradReverse(Var, f64),
    Outer(Var, Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    Scalar {
        inputs: Vec<Var>,
        grads: Vec<Tensor>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-channel batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients returned by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(invalid(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    /// `sum_i c_i * v_i` over same-shaped inputs (typically scalars).
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| invalid("weighted_sum of nothing"))?;
        let shape = self.value(first.0).shape().to_vec();
        let mut out = Tensor::zeros(&shape);
        for &(v, c) in terms {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(invalid("weighted_sum: shape mismatch"));
            }
            for (o, x) in out.data_mut().iter_mut().zip(t.data()) {
                *o += c * x;
            }
        }
        let ng = terms.iter().any(|&(v, _)| self.ng(v));
        Ok(self.push(out, Op::WeightedSum(terms.to_vec()), ng))
    }

    pub fn scale(&mut self, v: Var, c: f64) -> Var {
        self.weighted_sum(&[(v, c)]).expect("single term")
    }

    /// `x (B, In) -> x w^T + b` with `w (Out, In)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(invalid(format!("linear: input {xs:?} vs weight {ws:?}")));
        }
        let y = kernels::linear(self.value(x), self.value(w), b.map(|b| self.value(b)));
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(y, Op::Linear { x, w, b }, ng))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(invalid(format!("conv1d: input {xs:?} vs weight {ws:?}")));
        }
        if geom.stride == 0 || geom.dilation == 0 || geom.out_len(xs[2], ws[2]).is_none() {
            return Err(invalid(format!(
                "conv1d: length {} too short for kernel {} with {geom:?}",
                xs[2], ws[2]
            )));
        }
        let y = kernels::conv1d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(y, Op::Conv { x, w, b, geom }, ng))
    }

    /// Batch norm over `(B, C, T)` (or `(B, C)`) using the batch's own
    /// statistics. Returns the output and the statistics used.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let xv = self.value(x);
        let (b, c) = (xv.dim(0), xv.dim(1));
        let t = if xv.ndim() == 3 { xv.dim(2) } else { 1 };
        let n = b * t;
        if n == 0 {
            return Err(invalid("batch norm on an empty batch"));
        }
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for s in 0..b {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += xv.data()[(s * c + ch) * t..(s * c + ch + 1) * t]
                    .iter()
                    .sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for s in 0..b {
            for ch in 0..c {
                let m = mean[ch];
                var[ch] += xv.data()[(s * c + ch) * t..(s * c + ch + 1) * t]
                    .iter()
                    .map(|v| (v - m) * (v - m))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self.norm_affine(x, gamma, beta, &mean, &inv_std, true);
        Ok((
            out,
            BatchStats {
                mean,
                var,
                count: n,
            },
        ))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Var {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.norm_affine(x, gamma, beta, mean, &inv_std, false)
    }

    fn norm_affine(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        batch_stats: bool,
    ) -> Var {
        let xv = self.value(x);
        let c = xv.dim(1);
        let t = xv.row_len() / c.max(1);
        let mut xhat = xv.clone();
        let mut y = xv.clone();
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        for (i, (h, o)) in xhat
            .data_mut()
            .iter_mut()
            .zip(y.data_mut().iter_mut())
            .enumerate()
        {
            let ch = (i / t) % c;
            *h = (*h - mean[ch]) * inv_std[ch];
            *o = g[ch] * *h + be[ch];
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: inv_std.to_vec(),
                batch_stats,
            },
            ng,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(y, Op::Relu(x), ng)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::cos);
        let ng = self.ng(x);
        self.push(y, Op::Cos(x), ng)
    }

    /// Ceil-mode max pooling over time with window = stride = `size`.
    pub fn max_pool(&mut self, x: Var, size: usize) -> Result<Var> {
        if self.value(x).ndim() != 3 || size == 0 {
            return Err(invalid("max_pool expects (B, C, T) and size >= 1"));
        }
        let (y, argmax) = kernels::max_pool(self.value(x), size);
        let ng = self.ng(x);
        Ok(self.push(y, Op::MaxPool { x, argmax }, ng))
    }

    /// Global average over the time axis: `(B, C, T) -> (B, C)`.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 3 || xv.dim(2) == 0 {
            return Err(invalid("mean_time expects (B, C, T) with T >= 1"));
        }
        let (b, c, t) = (xv.dim(0), xv.dim(1), xv.dim(2));
        let y: Vec<f64> = xv
            .data()
            .chunks(t)
            .map(|r| r.iter().sum::<f64>() / t as f64)
            .collect();
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![b, c], y), Op::MeanTime(x), ng))
    }

    /// Row-wise softmax of a `(B, K)` matrix.
    pub fn softmax(&mut self, x: Var) -> Var {
        let y = softmax_rows(self.value(x));
        let ng = self.ng(x);
        self.push(y, Op::Softmax(x), ng)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let k = xv.dim(1);
        let mut y = xv.clone();
        for r in y.data_mut().chunks_mut(k.max(1)) {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            r.iter_mut().for_each(|v| *v -= lse);
        }
        let ng = self.ng(x);
        self.push(y, Op::LogSoftmax(x), ng)
    }

    /// Identity forward; scales the upstream gradient by `-lambda` backward.
    pub fn grad_reverse(&mut self, x: Var, lambda: f64) -> Var {
        let y = self.value(x).clone();
        let ng = self.ng(x);
        self.push(y, Op::GradReverse(x, lambda), ng)
    }

    /// Rows `start..start + len` of `x` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() == 0 || start + len > xv.dim(0) {
            return Err(invalid(format!(
                "slice_rows {start}..{} of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let w = xv.row_len();
        let mut shape = xv.shape().to_vec();
        shape[0] = len;
        let y = Tensor::from_parts(shape, xv.data()[start * w..(start + len) * w].to_vec());
        let ng = self.ng(x);
        Ok(self.push(y, Op::SliceRows { x, start }, ng))
    }

    /// Row-wise flattened outer product: `f (B, D)`, `p (B, K)` -> `(B, D*K)`.
    pub fn outer(&mut self, f: Var, p: Var) -> Result<Var> {
        let (fv, pv) = (self.value(f), self.value(p));
        if fv.ndim() != 2 || pv.ndim() != 2 || fv.dim(0) != pv.dim(0) {
            return Err(invalid("outer expects (B, D) and (B, K)"));
        }
        let (b, d, k) = (fv.dim(0), fv.dim(1), pv.dim(1));
        let mut y = Vec::with_capacity(b * d * k);
        for n in 0..b {
            for &fi in fv.row(n) {
                y.extend(pv.row(n).iter().map(|pk| fi * pk));
            }
        }
        let ng = self.ng(f) || self.ng(p);
        Ok(self.push(Tensor::from_parts(vec![b, d * k], y), Op::Outer(f, p), ng))
    }

    /// Records a scalar whose gradient with respect to each input is known.
    pub fn scalar_op(&mut self, inputs: &[Var], value: f64, grads: Vec<Tensor>) -> Result<Var> {
        if inputs.len() != grads.len() {
            return Err(invalid("scalar_op: one gradient per input required"));
        }
        for (v, g) in inputs.iter().zip(&grads) {
            if self.value(*v).shape() != g.shape() {
                return Err(invalid("scalar_op: gradient shape mismatch"));
            }
        }
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            Tensor::scalar(value),
            Op::Scalar {
                inputs: inputs.to_vec(),
                grads,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, g: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    acc(v, dy.scale(c));
                }
            }
            Op::Linear { x, w, b } => {
                if self.ng(*x) {
                    acc(*x, kernels::linear_grad_input(dy, self.value(*w)));
                }
                if self.ng(*w) {
                    acc(*w, kernels::linear_grad_weight(dy, self.value(*x)));
                }
                if let Some(b) = b {
                    acc(*b, kernels::column_sum(dy));
                }
            }
            Op::Conv { x, w, b, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.ng(*x) {
                    acc(*x, kernels::conv1d_grad_input(dy, wv, *geom, xv.dim(2)));
                }
                if self.ng(*w) {
                    acc(*w, kernels::conv1d_grad_weight(dy, xv, *geom, wv.dim(2)));
                }
                if let Some(b) = b {
                    acc(*b, kernels::channel_sum(dy));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let t = dy.row_len() / c.max(1);
                let b = dy.dim(0);
                let n = (b * t) as f64;
                let gv = self.value(*gamma).data();
                let ch_of = |i: usize| (i / t) % c;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (i, (g, h)) in dy.data().iter().zip(xhat.data()).enumerate() {
                    dgamma[ch_of(i)] += g * h;
                    dbeta[ch_of(i)] += g;
                }
                if self.ng(*x) {
                    let mut dx = dy.clone();
                    if *batch_stats {
                        for (i, d) in dx.data_mut().iter_mut().enumerate() {
                            let ch = ch_of(i);
                            // dxhat = dy * gamma; sums over dxhat reuse dbeta/dgamma.
                            let dxhat = *d * gv[ch];
                            *d = inv_std[ch] / n
                                * (n * dxhat
                                    - gv[ch] * dbeta[ch]
                                    - xhat.data()[i] * gv[ch] * dgamma[ch]);
                        }
                    } else {
                        for (i, d) in dx.data_mut().iter_mut().enumerate() {
                            let ch = ch_of(i);
                            *d *= gv[ch] * inv_std[ch];
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, Tensor::from_parts(vec![c], dgamma));
                acc(*beta, Tensor::from_parts(vec![c], dbeta));
            }
            Op::Relu(x) => {
                let mut g = dy.clone();
                for (d, y) in g.data_mut().iter_mut().zip(node.value.data()) {
                    if *y <= 0.0 {
                        *d = 0.0;
                    }
                }
                acc(*x, g);
            }
            Op::Cos(x) => {
                let xv = self.value(*x);
                let mut g = dy.clone();
                for (d, v) in g.data_mut().iter_mut().zip(xv.data()) {
                    *d *= -v.sin();
                }
                acc(*x, g);
            }
            Op::MaxPool { x, argmax } => {
                let mut g = Tensor::zeros(self.value(*x).shape());
                for (d, &i) in dy.data().iter().zip(argmax) {
                    g.data_mut()[i] += d;
                }
                acc(*x, g);
            }
            Op::MeanTime(x) => {
                let xv = self.value(*x);
                let t = xv.dim(2);
                let mut g = Tensor::zeros(xv.shape());
                for (row, d) in g.data_mut().chunks_mut(t).zip(dy.data()) {
                    row.fill(d / t as f64);
                }
                acc(*x, g);
            }
            Op::Softmax(x) => {
                let k = dy.dim(1);
                let mut g = dy.clone();
                for (gr, pr) in g.data_mut().chunks_mut(k).zip(node.value.data().chunks(k)) {
                    let dot: f64 = gr.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for (gv, pv) in gr.iter_mut().zip(pr) {
                        *gv = pv * (*gv - dot);
                    }
                }
                acc(*x, g);
            }
            Op::LogSoftmax(x) => {
                let k = dy.dim(1);
                let mut g = dy.clone();
                for (gr, lr) in g.data_mut().chunks_mut(k).zip(node.value.data().chunks(k)) {
                    let s: f64 = gr.iter().sum();
                    for (gv, lv) in gr.iter_mut().zip(lr) {
                        *gv -= lv.exp() * s;
                    }
                }
                acc(*x, g);
            }
            Op::GradReverse(x, lambda) => acc(*x, dy.scale(-lambda)),
            Op::SliceRows { x, start } => {
                let mut gx = Tensor::zeros(self.value(*x).shape());
                let w = dy.row_len();
                gx.data_mut()[start * w..start * w + dy.len()].copy_from_slice(dy.data());
                acc(*x, gx);
            }
            Op::Outer(f, p) => {
                let (fv, pv) = (self.value(*f), self.value(*p));
                let (b, d, k) = (fv.dim(0), fv.dim(1), pv.dim(1));
                if self.ng(*f) {
                    let mut gf = Tensor::zeros(&[b, d]);
                    for n in 0..b {
                        for i in 0..d {
                            let row = &dy.data()[(n * d + i) * k..(n * d + i + 1) * k];
                            gf.data_mut()[n * d + i] =
                                row.iter().zip(pv.row(n)).map(|(a, c)| a * c).sum();
                        }
                    }
                    acc(*f, gf);
                }
                if self.ng(*p) {
                    let mut gp = Tensor::zeros(&[b, k]);
                    for n in 0..b {
                        for i in 0..d {
                            let fi = fv.data()[n * d + i];
                            let row = &dy.data()[(n * d + i) * k..(n * d + i + 1) * k];
                            for (g, r) in gp.data_mut()[n * k..(n + 1) * k].iter_mut().zip(row) {
                                *g += fi * r;
                            }
                        }
                    }
                    acc(*p, gp);
                }
            }
            Op::Scalar { inputs, grads: pre } => {
                let up = dy.item();
                for (v, g) in inputs.iter().zip(pre) {
                    acc(*v, g.scale(up));
                }
            }
        }
    }
}

/// Numerically stable row-wise softmax of a `(B, K)` matrix.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let k = x.dim(1);
    let mut y = x.clone();
    for r in y.data_mut().chunks_mut(k.max(1)) {
        let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in r.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        r.iter_mut().for_each(|v| *v /= s);
    }
    y
}
