//! Backbone and prediction-head builders, parameter storage, and layer taps.

mod backbone;
mod head;
mod layers;
mod network;
mod params;
mod persist;
mod pool;

pub use backbone::{BackboneSpec, StageSpec};
pub use head::{HeadLayout, HeadSpec};
pub use layers::{ForwardCtx, StatUpdates};
pub use network::{head_tap, stage_tap, ForwardPass, LayerTap, Network, NetworkSpec, TapKind, BACKBONE_TAP};
pub use params::{Param, ParamId, ParamKind, ParamStore};
pub use persist::{read_spec, SPEC_KEY};
pub use pool::{pool_intermediate, pooled_side};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unknown layer tap `{0}`")]
    UnknownTap(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[cfg(test)]
mod tests;
