use serde::{Deserialize, Serialize};

use super::layers::{ForwardCtx, Linear, Norm};
use super::params::ParamStore;
use super::ModelError;
use crate::rng::Rng;
use crate::tensor::{Result, Scalar, Var};

/// Layer layout of a prediction head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayout {
    /// `[m, d]`, a single affine map.
    Linear,
    /// `[m, 2m, d]`
    Mlp2,
    /// `[m, 2m, m, 2m, d]`, no norm/activation after layer 2.
    Mlp4,
    /// `[m, d, d, d, d]`, same layer-2 rule as `Mlp4`.
    EqualDim4,
    /// Explicit dims, first must equal `m` and last must equal `d`.
    Custom(Vec<usize>),
}

impl HeadLayout {
    pub fn depth(&self) -> usize {
        match self {
            HeadLayout::Linear => 1,
            HeadLayout::Mlp2 => 2,
            HeadLayout::Mlp4 | HeadLayout::EqualDim4 => 4,
            HeadLayout::Custom(dims) => dims.len().saturating_sub(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layout: HeadLayout,
}

impl HeadSpec {
    pub fn new(input_dim: usize, output_dim: usize, layout: HeadLayout) -> Self {
        HeadSpec { input_dim, output_dim, layout }
    }

    pub fn dims(&self) -> std::result::Result<Vec<usize>, ModelError> {
        let (m, d) = (self.input_dim, self.output_dim);
        if m == 0 || d == 0 {
            return Err(ModelError::InvalidSpec(format!("head dims must be positive, got m={m}, d={d}")));
        }
        Ok(match &self.layout {
            HeadLayout::Linear => vec![m, d],
            HeadLayout::Mlp2 => vec![m, 2 * m, d],
            HeadLayout::Mlp4 => vec![m, 2 * m, m, 2 * m, d],
            HeadLayout::EqualDim4 => vec![m, d, d, d, d],
            HeadLayout::Custom(dims) => {
                if dims.len() < 2 || dims[0] != m || dims[dims.len() - 1] != d || dims.contains(&0) {
                    return Err(ModelError::InvalidSpec(format!("custom head dims {dims:?} contradict m={m}, d={d}")));
                }
                dims.clone()
            }
        })
    }

    /// Whether layer `i` (1-based) ends with batch-norm and ReLU.
    pub fn has_norm_act(&self, layer: usize) -> bool {
        let depth = self.layout.depth();
        if layer >= depth {
            return false;
        }
        !(matches!(self.layout, HeadLayout::Mlp4 | HeadLayout::EqualDim4) && layer == 2)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct HeadLayer {
    linear: Linear,
    norm: Option<Norm>,
}

#[derive(Debug, Clone)]
pub(crate) struct Head {
    layers: Vec<HeadLayer>,
}

impl Head {
    pub fn build<T: Scalar>(
        spec: &HeadSpec,
        prefix: &str,
        store: &mut ParamStore<T>,
        rng: &mut Rng,
    ) -> std::result::Result<Self, ModelError> {
        let dims = spec.dims()?;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let layer = i + 1;
                let linear = Linear::build(store, &format!("{prefix}.layer{layer}"), w[0], w[1], rng);
                let norm = spec.has_norm_act(layer).then(|| Norm::build(store, &format!("{prefix}.layer{layer}.norm"), w[1]));
                HeadLayer { linear, norm }
            })
            .collect();
        Ok(Head { layers })
    }

    /// Output of every layer, last entry is the head output.
    pub fn forward<T: Scalar>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Vec<Var>> {
        let mut h = x;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            h = layer.linear.forward(ctx, h)?;
            if let Some(norm) = &layer.norm {
                h = norm.forward(ctx, h)?;
                h = ctx.tape.relu(h)?;
            }
            outs.push(h);
        }
        Ok(outs)
    }
}
