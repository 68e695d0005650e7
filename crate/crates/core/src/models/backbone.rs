use serde::{Deserialize, Serialize};

use super::layers::{Conv, ForwardCtx, Norm};
use super::params::ParamStore;
use super::ModelError;
use crate::rng::Rng;
use crate::tensor::{conv_output_extent, Result, Scalar, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub blocks: usize,
}

/// Tiny configurable CNN: each stage opens with a stride-2 block, features are
/// global-average-pooled after the last stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub stages: Vec<StageSpec>,
    pub residual: bool,
    /// `(C, H, W)`
    pub input: (usize, usize, usize),
}

impl BackboneSpec {
    pub fn new(stages: &[(usize, usize)], residual: bool, input: (usize, usize, usize)) -> Self {
        BackboneSpec {
            stages: stages.iter().map(|&(channels, blocks)| StageSpec { channels, blocks }).collect(),
            residual,
            input,
        }
    }

    /// Width `m` of the pooled backbone feature.
    pub fn feature_dim(&self) -> usize {
        self.stages.last().map(|s| s.channels).unwrap_or(0)
    }

    /// Spatial extent `(H, W)` after each stage.
    pub fn stage_extents(&self) -> std::result::Result<Vec<(usize, usize)>, ModelError> {
        if self.stages.is_empty() {
            return Err(ModelError::InvalidSpec("backbone needs at least one stage".into()));
        }
        let (c, mut h, mut w) = self.input;
        if c == 0 {
            return Err(ModelError::InvalidSpec("input must have at least one channel".into()));
        }
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.blocks == 0 {
                return Err(ModelError::InvalidSpec(format!("stage {} has zero channels or blocks", i + 1)));
            }
            if h < 2 || w < 2 {
                return Err(ModelError::InvalidSpec(format!(
                    "spatial extent {h}x{w} cannot be halved at stage {}",
                    i + 1
                )));
            }
            h = conv_output_extent(h, 3, 2, 1).expect("h >= 2");
            w = conv_output_extent(w, 3, 2, 1).expect("w >= 2");
            out.push((h, w));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    conv1: Conv,
    norm1: Norm,
    second: Option<(Conv, Norm)>,
    shortcut: Option<(Conv, Norm)>,
    residual: bool,
}

impl Block {
    fn forward<T: Scalar>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(ctx, x)?;
        let h = self.norm1.forward(ctx, h)?;
        let h = ctx.tape.relu(h)?;
        if !self.residual {
            return Ok(h);
        }
        let (conv2, norm2) = self.second.as_ref().expect("residual block has a second conv");
        let h = conv2.forward(ctx, h)?;
        let h = norm2.forward(ctx, h)?;
        let skip = match &self.shortcut {
            Some((conv, norm)) => {
                let s = conv.forward(ctx, x)?;
                norm.forward(ctx, s)?
            }
            None => x,
        };
        let sum = ctx.tape.add(h, skip)?;
        ctx.tape.relu(sum)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Backbone {
    stages: Vec<Vec<Block>>,
}

impl Backbone {
    pub fn build<T: Scalar>(spec: &BackboneSpec, store: &mut ParamStore<T>, rng: &mut Rng) -> std::result::Result<Self, ModelError> {
        spec.stage_extents()?;
        let mut in_ch = spec.input.0;
        let mut stages = Vec::new();
        for (si, stage) in spec.stages.iter().enumerate() {
            let mut blocks = Vec::new();
            for bi in 0..stage.blocks {
                let name = format!("backbone.stage{}.block{}", si + 1, bi);
                let stride = if bi == 0 { 2 } else { 1 };
                let conv1 = Conv::build(store, &format!("{name}.conv1"), in_ch, stage.channels, 3, stride, 1, rng);
                let norm1 = Norm::build(store, &format!("{name}.norm1"), stage.channels);
                let (second, shortcut) = if spec.residual {
                    let conv2 = Conv::build(store, &format!("{name}.conv2"), stage.channels, stage.channels, 3, 1, 1, rng);
                    let norm2 = Norm::build(store, &format!("{name}.norm2"), stage.channels);
                    let shortcut = (stride != 1 || in_ch != stage.channels).then(|| {
                        let conv =
                            Conv::build(store, &format!("{name}.shortcut.conv"), in_ch, stage.channels, 1, stride, 0, rng);
                        (conv, Norm::build(store, &format!("{name}.shortcut.norm"), stage.channels))
                    });
                    (Some((conv2, norm2)), shortcut)
                } else {
                    (None, None)
                };
                blocks.push(Block { conv1, norm1, second, shortcut, residual: spec.residual });
                in_ch = stage.channels;
            }
            stages.push(blocks);
        }
        Ok(Backbone { stages })
    }

    /// Returns each stage's output map followed by the pooled feature.
    pub fn forward<T: Scalar>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<(Vec<Var>, Var)> {
        let mut h = x;
        let mut stage_outputs = Vec::with_capacity(self.stages.len());
        for blocks in &self.stages {
            for block in blocks {
                h = block.forward(ctx, h)?;
            }
            stage_outputs.push(h);
        }
        let pooled = ctx.tape.global_avg_pool(h)?;
        Ok((stage_outputs, pooled))
    }
}
