//! Wengert-list reverse-mode differentiation.
//!
//! Every op appends one node holding its output value and whatever it needs for the
//! vector-Jacobian product. `backward` walks the list in exact reverse order. Leaf
//! gradients persist across `backward` calls and accumulate additively.

use super::kernels::{self, ConvGeometry};
use super::{lit, Result, Scalar, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Mutable view of a norm layer's running statistics.
pub struct RunningStats<'a, T> {
    pub mean: &'a mut [T],
    pub var: &'a mut [T],
    pub momentum: f64,
    pub eps: f64,
}

/// Leaf gradients collected by a backward pass, in leaf creation order.
pub type Gradients<T> = Vec<(Var, Vec<T>)>;

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, p: usize, q: usize, r: usize },
    AddBias { x: Var, bias: Var, width: usize },
    Conv2d { input: Var, kernel: Var, geom: ConvGeometry, filters: usize, cols: Vec<T> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, n: usize, c: usize, s: usize, train: bool },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Sum { x: Var },
    Mean { x: Var },
    GlobalAvgPool { x: Var, n: usize, c: usize, s: usize },
    L2Normalize { x: Var, norms: Vec<T>, width: usize },
    Softmax { x: Var, tau: T, width: usize },
    LogSoftmax { x: Var, tau: T, width: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T>, width: usize },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
    op: Op<T>,
    leaf_grad: Option<Vec<T>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn finite<T: Scalar>(op: &'static str, v: &[T]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar(v.0))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node shape is consistent")
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|n| n.leaf_grad.as_deref())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: &'static str, shape: Vec<usize>, value: Vec<T>, requires_grad: bool, kind: Op<T>) -> Result<Var> {
        finite(op, &value)?;
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, requires_grad, op: kind, leaf_grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a tensor as a leaf; gradient tracking follows the tensor's flag.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Result<Var> {
        self.push("leaf", t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Records a detached value (never receives gradient).
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<T>) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(shape_err("constant", format!("shape {shape:?} vs {} values", value.len())));
        }
        self.push("constant", shape, value, false, Op::Leaf)
    }

    /// Records a leaf that receives gradient.
    pub fn variable(&mut self, shape: Vec<usize>, value: Vec<T>) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(shape_err("variable", format!("shape {shape:?} vs {} values", value.len())));
        }
        self.push("variable", shape, value, true, Op::Leaf)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.node(a)?.shape.clone(), self.node(b)?.shape.clone());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a), self.value(b), p, q, r);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", vec![p, r], out, rg, Op::MatMul { a, b, p, q, r })
    }

    /// Adds a `[d]` bias to every row of a `[N, d]` input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.node(x)?.shape.clone(), self.node(bias)?.shape.clone());
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(shape_err("add_bias", format!("{sx:?} + {sb:?}")));
        }
        let width = sx[1];
        let b = self.value(bias).to_vec();
        let out: Vec<T> = self
            .value(x)
            .chunks(width.max(1))
            .flat_map(|row| row.iter().zip(&b).map(|(&v, &bb)| v + bb))
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        self.push("add_bias", sx, out, rg, Op::AddBias { x, bias, width })
    }

    /// Cross-correlation of `[N,C,H,W]` with `[F,C,k,k]`, no bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (si, sk) = (self.node(input)?.shape.clone(), self.node(kernel)?.shape.clone());
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] || sk[2] != sk[3] {
            return Err(shape_err("conv2d", format!("input {si:?}, kernel {sk:?}")));
        }
        if stride == 0 {
            return Err(TensorError::Invalid { op: "conv2d", detail: "stride must be >= 1".into() });
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (f, k) = (sk[0], sk[2]);
        let oh = kernels::conv_output_extent(h, k, stride, padding);
        let ow = kernels::conv_output_extent(w, k, stride, padding);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(TensorError::Invalid {
                op: "conv2d",
                detail: format!("kernel {k} larger than padded input {}x{}", h + 2 * padding, w + 2 * padding),
            });
        };
        let geom = ConvGeometry { n, c, h, w, k, stride, pad: padding, oh, ow };
        let cols = kernels::im2col(self.value(input), &geom);
        let fm = kernels::matmul(self.value(kernel), &cols, f, geom.patch_len(), geom.columns());
        let out = kernels::feature_major_to_batch_major(&fm, f, n, oh * ow);
        let rg = self.rg(input) || self.rg(kernel);
        let cols = if rg { cols } else { Vec::new() };
        self.push("conv2d", vec![n, f, oh, ow], out, rg, Op::Conv2d { input, kernel, geom, filters: f, cols })
    }

    /// Batch normalization over `[N, C]` or `[N, C, H, W]` inputs, per channel.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: RunningStats<'_, T>,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let sx = self.node(x)?.shape.clone();
        if sx.len() != 2 && sx.len() != 4 {
            return Err(shape_err("batchnorm", format!("expected [N,C] or [N,C,H,W], got {sx:?}")));
        }
        let (n, c) = (sx[0], sx[1]);
        let s: usize = sx[2..].iter().product();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.node(v)?.shape != [c] {
                return Err(shape_err("batchnorm", format!("{name} shape {:?} for {c} channels", self.shape(v))));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(shape_err("batchnorm", format!("running stats of width {} for {c} channels", stats.mean.len())));
        }
        let train = mode == BatchNormMode::Train;
        if train && n < 2 {
            return Err(TensorError::Invalid { op: "batchnorm", detail: format!("train mode needs batch >= 2, got {n}") });
        }
        let eps = lit::<T>(stats.eps);
        let xs = self.value(x);
        let count = n * s;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        if train {
            for ni in 0..n {
                for ci in 0..c {
                    for &v in &xs[(ni * c + ci) * s..(ni * c + ci + 1) * s] {
                        mean[ci] += v;
                    }
                }
            }
            let inv_count = lit::<T>(1.0 / count as f64);
            mean.iter_mut().for_each(|m| *m *= inv_count);
            for ni in 0..n {
                for ci in 0..c {
                    for &v in &xs[(ni * c + ci) * s..(ni * c + ci + 1) * s] {
                        let d = v - mean[ci];
                        var[ci] += d * d;
                    }
                }
            }
            var.iter_mut().for_each(|v| *v *= inv_count);
            finite("batchnorm", &var)?;
        } else {
            mean.copy_from_slice(stats.mean);
            var.copy_from_slice(stats.var);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        finite("batchnorm", &inv_std)?;
        let (g, b) = (self.value(gamma).to_vec(), self.value(beta).to_vec());
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for ni in 0..n {
            for ci in 0..c {
                let range = (ni * c + ci) * s..(ni * c + ci + 1) * s;
                for i in range {
                    let h = (xs[i] - mean[ci]) * inv_std[ci];
                    xhat[i] = h;
                    out[i] = g[ci] * h + b[ci];
                }
            }
        }
        if train {
            let m = lit::<T>(stats.momentum);
            let unbias = if count > 1 { lit::<T>(count as f64 / (count as f64 - 1.0)) } else { T::one() };
            for ci in 0..c {
                stats.mean[ci] = (T::one() - m) * stats.mean[ci] + m * mean[ci];
                stats.var[ci] = (T::one() - m) * stats.var[ci] + m * var[ci] * unbias;
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push("batchnorm", sx, out, rg, Op::BatchNorm { x, gamma, beta, xhat, inv_std, n, c, s, train })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let (shape, rg) = (self.node(x)?.shape.clone(), self.rg(x));
        self.push("relu", shape, out, rg, Op::Relu { x })
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (&self.node(a)?.shape, &self.node(b)?.shape);
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa.clone())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shapes("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push("add", shape, out, rg, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shapes("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push("sub", shape, out, rg, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shapes("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push("mul", shape, out, rg, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        let (shape, rg) = (self.node(x)?.shape.clone(), self.rg(x));
        self.push("scale", shape, out, rg, Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.node(x)?.value.iter().copied().sum();
        let rg = self.rg(x);
        self.push("sum", vec![], vec![total], rg, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let node = self.node(x)?;
        if node.value.is_empty() {
            return Err(TensorError::Degenerate { op: "mean", detail: "empty tensor".into() });
        }
        let total: T = node.value.iter().copied().sum();
        let m = total / lit::<T>(node.value.len() as f64);
        let rg = self.rg(x);
        self.push("mean", vec![], vec![m], rg, Op::Mean { x })
    }

    /// `[N,C,H,W]` -> `[N,C]`
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let sx = self.node(x)?.shape.clone();
        if sx.len() != 4 {
            return Err(shape_err("global_avg_pool", format!("{sx:?}")));
        }
        let (n, c, s) = (sx[0], sx[1], sx[2] * sx[3]);
        let inv = lit::<T>(1.0 / s as f64);
        let out = self.value(x).chunks(s).map(|plane| plane.iter().copied().sum::<T>() * inv).collect();
        let rg = self.rg(x);
        self.push("global_avg_pool", vec![n, c], out, rg, Op::GlobalAvgPool { x, n, c, s })
    }

    /// Rescales every trailing-dimension row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let sx = self.node(x)?.shape.clone();
        let width = *sx.last().ok_or_else(|| shape_err("l2_normalize", "scalar input".into()))?;
        if width == 0 {
            return Err(shape_err("l2_normalize", "zero-width rows".into()));
        }
        let mut norms = Vec::new();
        let mut out = Vec::with_capacity(self.value(x).len());
        for (i, row) in self.value(x).chunks(width).enumerate() {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(norm > lit::<T>(eps)) {
                return Err(TensorError::Degenerate {
                    op: "l2_normalize",
                    detail: format!("row {i} has norm {norm} <= {eps:e}"),
                });
            }
            out.extend(row.iter().map(|&v| v / norm));
            norms.push(norm);
        }
        let rg = self.rg(x);
        self.push("l2_normalize", sx, out, rg, Op::L2Normalize { x, norms, width })
    }

    fn check_tau(op: &'static str, tau: f64) -> Result<()> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(TensorError::Invalid { op, detail: format!("temperature must be > 0, got {tau}") });
        }
        Ok(())
    }

    /// Row-wise `softmax(x / tau)` with max subtraction.
    pub fn softmax_temperature(&mut self, x: Var, tau: f64) -> Result<Var> {
        Self::check_tau("softmax_temperature", tau)?;
        let sx = self.node(x)?.shape.clone();
        let width = *sx.last().ok_or_else(|| shape_err("softmax_temperature", "scalar input".into()))?;
        let t = lit::<T>(tau);
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).chunks(width.max(1)) {
            out.extend(softmax_row(row, t));
        }
        let rg = self.rg(x);
        self.push("softmax_temperature", sx, out, rg, Op::Softmax { x, tau: t, width })
    }

    /// Row-wise `log softmax(x / tau)`.
    pub fn log_softmax_temperature(&mut self, x: Var, tau: f64) -> Result<Var> {
        Self::check_tau("log_softmax_temperature", tau)?;
        let sx = self.node(x)?.shape.clone();
        let width = *sx.last().ok_or_else(|| shape_err("log_softmax_temperature", "scalar input".into()))?;
        let t = lit::<T>(tau);
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).chunks(width.max(1)) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v / t));
            let lse = row.iter().map(|&v| (v / t - max).exp()).sum::<T>().ln() + max;
            out.extend(row.iter().map(|&v| v / t - lse));
        }
        let rg = self.rg(x);
        self.push("log_softmax_temperature", sx, out, rg, Op::LogSoftmax { x, tau: t, width })
    }

    /// Mean softmax cross-entropy of `[N, c]` logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sx = self.node(logits)?.shape.clone();
        if sx.len() != 2 || sx[0] != labels.len() {
            return Err(shape_err("cross_entropy", format!("logits {sx:?} with {} labels", labels.len())));
        }
        let width = sx[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= width) {
            return Err(TensorError::Invalid { op: "cross_entropy", detail: format!("label {bad} >= {width} classes") });
        }
        let mut probs = Vec::with_capacity(self.value(logits).len());
        let mut loss = T::zero();
        for (row, &label) in self.value(logits).chunks(width).zip(labels) {
            let p = softmax_row(row, T::one());
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[label];
            probs.extend(p);
        }
        let loss = loss / lit::<T>(labels.len().max(1) as f64);
        let rg = self.rg(logits);
        self.push(
            "cross_entropy",
            vec![],
            vec![loss],
            rg,
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs, width },
        )
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self.node(loss)?;
        if node.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(node.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, g, &mut grads)?;
        }
        Ok(())
    }

    /// Leaf gradients for every gradient-tracking leaf reached so far.
    pub fn leaf_gradients(&self) -> Gradients<T> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.leaf_grad.as_ref().map(|g| (Var(i), g.clone())))
            .collect()
    }

    fn backprop_node(&mut self, i: usize, g: Vec<T>, grads: &mut [Option<Vec<T>>]) -> Result<()> {
        if matches!(self.nodes[i].op, Op::Leaf) {
            let node = &mut self.nodes[i];
            match &mut node.leaf_grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &c)| *a += c),
                slot @ None => *slot = Some(g),
            }
            return Ok(());
        }
        let nodes = &self.nodes;
        let node = &nodes[i];
        let mut send = |v: Var, contribution: Vec<T>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &c)| *a += c),
                slot @ None => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Leaf => unreachable!("leaves handled above"),
            &Op::MatMul { a, b, p, q, r } => {
                if nodes[a.0].requires_grad {
                    send(a, kernels::matmul_nt(&g, &nodes[b.0].value, p, r, q));
                }
                if nodes[b.0].requires_grad {
                    send(b, kernels::matmul_tn(&nodes[a.0].value, &g, q, p, r));
                }
            }
            &Op::AddBias { x, bias, width } => {
                let mut gb = vec![T::zero(); width];
                for row in g.chunks(width.max(1)) {
                    gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                send(bias, gb);
                send(x, g);
            }
            Op::Conv2d { input, kernel, geom, filters, cols } => {
                let p = geom.oh * geom.ow;
                let gm = kernels::batch_major_to_feature_major(&g, *filters, geom.n, p);
                if nodes[kernel.0].requires_grad {
                    send(*kernel, kernels::matmul_nt(&gm, cols, *filters, geom.columns(), geom.patch_len()));
                }
                if nodes[input.0].requires_grad {
                    let gcols =
                        kernels::matmul_tn(&nodes[kernel.0].value, &gm, geom.patch_len(), *filters, geom.columns());
                    send(*input, kernels::col2im(&gcols, geom));
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, n, c, s, train } => {
                let (n, c, s) = (*n, *c, *s);
                let gam = &nodes[gamma.0].value;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        for j in (ni * c + ci) * s..(ni * c + ci + 1) * s {
                            dgamma[ci] += g[j] * xhat[j];
                            dbeta[ci] += g[j];
                        }
                    }
                }
                if nodes[x.0].requires_grad {
                    let mut dx = vec![T::zero(); g.len()];
                    if *train {
                        let count = lit::<T>((n * s) as f64);
                        for ni in 0..n {
                            for ci in 0..c {
                                let k = gam[ci] * inv_std[ci] / count;
                                for j in (ni * c + ci) * s..(ni * c + ci + 1) * s {
                                    dx[j] = k * (count * g[j] - dbeta[ci] - xhat[j] * dgamma[ci]);
                                }
                            }
                        }
                    } else {
                        for ni in 0..n {
                            for ci in 0..c {
                                let k = gam[ci] * inv_std[ci];
                                for j in (ni * c + ci) * s..(ni * c + ci + 1) * s {
                                    dx[j] = k * g[j];
                                }
                            }
                        }
                    }
                    send(*x, dx);
                }
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            &Op::Relu { x } => {
                let dx = nodes[x.0].value.iter().zip(&g).map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() });
                send(x, dx.collect());
            }
            &Op::Add { a, b } => {
                send(a, g.clone());
                send(b, g);
            }
            &Op::Sub { a, b } => {
                send(b, g.iter().map(|&v| -v).collect());
                send(a, g);
            }
            &Op::Mul { a, b } => {
                let ga = g.iter().zip(&nodes[b.0].value).map(|(&gv, &bv)| gv * bv).collect();
                let gb = g.iter().zip(&nodes[a.0].value).map(|(&gv, &av)| gv * av).collect();
                send(a, ga);
                send(b, gb);
            }
            &Op::Scale { x, factor } => send(x, g.iter().map(|&v| v * factor).collect()),
            &Op::Sum { x } => send(x, vec![g[0]; nodes[x.0].value.len()]),
            &Op::Mean { x } => {
                let len = nodes[x.0].value.len();
                send(x, vec![g[0] / lit::<T>(len as f64); len]);
            }
            &Op::GlobalAvgPool { x, n, c, s } => {
                let inv = lit::<T>(1.0 / s as f64);
                let mut dx = Vec::with_capacity(n * c * s);
                for &gv in &g {
                    dx.extend(std::iter::repeat(gv * inv).take(s));
                }
                send(x, dx);
            }
            Op::L2Normalize { x, norms, width } => {
                let y = &node.value;
                let mut dx = Vec::with_capacity(g.len());
                for ((gr, yr), &nrm) in g.chunks(*width).zip(y.chunks(*width)).zip(norms) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(&gv, &yv)| (gv - yv * dot) / nrm));
                }
                send(*x, dx);
            }
            Op::Softmax { x, tau, width } => {
                let y = &node.value;
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(*width).zip(y.chunks(*width)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(&gv, &yv)| yv * (gv - dot) / *tau));
                }
                send(*x, dx);
            }
            Op::LogSoftmax { x, tau, width } => {
                let y = &node.value;
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(*width).zip(y.chunks(*width)) {
                    let total: T = gr.iter().copied().sum();
                    dx.extend(gr.iter().zip(yr).map(|(&gv, &yv)| (gv - yv.exp() * total) / *tau));
                }
                send(*x, dx);
            }
            Op::CrossEntropy { logits, labels, probs, width } => {
                let scale = g[0] / lit::<T>(labels.len().max(1) as f64);
                let mut dx = probs.clone();
                for (row, &label) in dx.chunks_mut(*width).zip(labels) {
                    row[label] -= T::one();
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                send(*logits, dx);
            }
        }
        Ok(())
    }
}

fn softmax_row<T: Scalar>(row: &[T], tau: T) -> Vec<T> {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v / tau));
    let exps: Vec<T> = row.iter().map(|&v| (v / tau - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
