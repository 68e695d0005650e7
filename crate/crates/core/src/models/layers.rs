use rand_distr::{Distribution, Normal};

use super::params::{ParamId, ParamKind, ParamStore};
use crate::rng::Rng;
use crate::tensor::{lit, BatchNormMode, Result, RunningStats, Scalar, Tape, Tensor, Var};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

fn kaiming<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| lit::<T>(normal.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Running-stat updates produced by a train-mode forward, applied after the pass.
#[derive(Debug, Default)]
pub struct StatUpdates<T> {
    pub(crate) entries: Vec<(ParamId, ParamId, Vec<T>, Vec<T>)>,
}

impl<T: Scalar> StatUpdates<T> {
    pub fn apply(self, store: &mut ParamStore<T>) {
        for (mean_id, var_id, mean, var) in self.entries {
            store.get_mut(mean_id).tensor.data_mut().copy_from_slice(&mean);
            store.get_mut(var_id).tensor.data_mut().copy_from_slice(&var);
        }
    }
}

/// Per-pass state: which parameters are on the tape and whether they track gradients.
pub struct ForwardCtx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub store: &'a ParamStore<T>,
    pub mode: BatchNormMode,
    pub track_grad: bool,
    pub bindings: Vec<(ParamId, Var)>,
    pub stats: StatUpdates<T>,
}

impl<'a, T: Scalar> ForwardCtx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, mode: BatchNormMode, track_grad: bool) -> Self {
        ForwardCtx { tape, store, mode, track_grad, bindings: Vec::new(), stats: StatUpdates { entries: Vec::new() } }
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&(_, v)) = self.bindings.iter().find(|(p, _)| *p == id) {
            return Ok(v);
        }
        let t = &self.store.get(id).tensor;
        let v = if self.track_grad && t.requires_grad() {
            self.tape.variable(t.shape().to_vec(), t.data().to_vec())?
        } else {
            self.tape.constant(t.shape().to_vec(), t.data().to_vec())?
        };
        self.bindings.push((id, v));
        Ok(v)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let w = kaiming(vec![out_ch, in_ch, k, k], in_ch * k * k, rng);
        Conv { weight: store.add(format!("{name}.weight"), ParamKind::Weight, w), stride, padding }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight)?;
        ctx.tape.conv2d(x, w, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl Norm {
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), ParamKind::NormScale, Tensor::full(vec![channels], T::one())),
            beta: store.add(format!("{name}.beta"), ParamKind::NormShift, Tensor::zeros(vec![channels])),
            running_mean: store.add(format!("{name}.running_mean"), ParamKind::RunningMean, Tensor::zeros(vec![channels])),
            running_var: store.add(format!("{name}.running_var"), ParamKind::RunningVar, Tensor::full(vec![channels], T::one())),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let g = ctx.param(self.gamma)?;
        let b = ctx.param(self.beta)?;
        let mut mean = ctx.store.get(self.running_mean).tensor.data().to_vec();
        let mut var = ctx.store.get(self.running_var).tensor.data().to_vec();
        let stats = RunningStats { mean: &mut mean, var: &mut var, momentum: BN_MOMENTUM, eps: BN_EPS };
        let out = ctx.tape.batchnorm(x, g, b, stats, ctx.mode)?;
        if ctx.mode == BatchNormMode::Train {
            ctx.stats.entries.push((self.running_mean, self.running_var, mean, var));
        }
        Ok(out)
    }
}

/// Affine map `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        let w = kaiming(vec![input, output], input, rng);
        Linear {
            weight: store.add(format!("{name}.weight"), ParamKind::Weight, w),
            bias: store.add(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(vec![output])),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight)?;
        let b = ctx.param(self.bias)?;
        let xw = ctx.tape.matmul(x, w)?;
        ctx.tape.add_bias(xw, b)
    }
}
