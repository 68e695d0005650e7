use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneSpec};
use super::head::{Head, HeadSpec};
use super::layers::{ForwardCtx, StatUpdates};
use super::params::{ParamId, ParamStore};
use super::ModelError;
use crate::rng;
use crate::tensor::{BatchNormMode, Result, Scalar, Tape, Tensor, Var};

pub const BACKBONE_TAP: &str = "backbone";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapKind {
    ConvStage,
    BackboneOutput,
    HeadIntermediate,
    HeadOutput,
}

/// Named activation extraction point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTap {
    pub name: String,
    pub kind: TapKind,
    /// Flattened per-sample width (conv stages report `C*H*W`).
    pub width: usize,
}

pub fn stage_tap(stage: usize) -> String {
    format!("stage{stage}")
}

/// Tap name for layer `layer` (1-based) of head `head`; the last layer is `head{k}.out`.
pub fn head_tap(head: usize, layer: usize, depth: usize) -> String {
    if layer == depth {
        format!("head{head}.out")
    } else {
        format!("head{head}.{layer}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub backbone: BackboneSpec,
    pub heads: Vec<HeadSpec>,
}

/// Backbone plus zero or more prediction heads sharing it.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    backbone: Backbone,
    heads: Vec<Head>,
    pub store: ParamStore<T>,
}

/// Vars produced by one forward pass, plus what is needed to finish the step.
pub struct ForwardPass<T> {
    pub stages: Vec<Var>,
    pub backbone: Var,
    /// Per head, every layer output; the last is the head output.
    pub heads: Vec<Vec<Var>>,
    pub bindings: Vec<(ParamId, Var)>,
    pub stats: StatUpdates<T>,
}

impl<T> ForwardPass<T> {
    pub fn head_output(&self, k: usize) -> Var {
        *self.heads[k].last().expect("heads have at least one layer")
    }
}

impl<T: Scalar> Network<T> {
    /// Seeded build. Backbone and each head draw from separate init streams, so adding or
    /// changing heads leaves the backbone initialization untouched.
    pub fn build(spec: NetworkSpec, seed: u64) -> std::result::Result<Self, ModelError> {
        let m = spec.backbone.feature_dim();
        let mut store = ParamStore::new();
        let mut rng = rng::stream(seed, "init.backbone", &[]);
        let backbone = Backbone::build(&spec.backbone, &mut store, &mut rng)?;
        let mut heads = Vec::with_capacity(spec.heads.len());
        for (k, hs) in spec.heads.iter().enumerate() {
            if hs.input_dim != m {
                return Err(ModelError::InvalidSpec(format!(
                    "head {k} expects input width {}, backbone emits {m}",
                    hs.input_dim
                )));
            }
            let mut rng = rng::stream(seed, "init.head", &[k as u64]);
            heads.push(Head::build(hs, &format!("head{k}"), &mut store, &mut rng)?);
        }
        Ok(Network { spec, backbone, heads, store })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.backbone.feature_dim()
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn taps(&self) -> Vec<LayerTap> {
        let mut taps = Vec::new();
        let extents = self.spec.backbone.stage_extents().expect("validated at build");
        for (i, (stage, (h, w))) in self.spec.backbone.stages.iter().zip(extents).enumerate() {
            taps.push(LayerTap { name: stage_tap(i + 1), kind: TapKind::ConvStage, width: stage.channels * h * w });
        }
        taps.push(LayerTap { name: BACKBONE_TAP.into(), kind: TapKind::BackboneOutput, width: self.feature_dim() });
        for (k, hs) in self.spec.heads.iter().enumerate() {
            let dims = hs.dims().expect("validated at build");
            let depth = dims.len() - 1;
            for layer in 1..=depth {
                let kind = if layer == depth { TapKind::HeadOutput } else { TapKind::HeadIntermediate };
                taps.push(LayerTap { name: head_tap(k, layer, depth), kind, width: dims[layer] });
            }
        }
        taps
    }

    pub fn forward(&self, tape: &mut Tape<T>, input: Var, mode: BatchNormMode, track_grad: bool) -> Result<ForwardPass<T>> {
        let mut ctx = ForwardCtx::new(tape, &self.store, mode, track_grad);
        let (stages, backbone) = self.backbone.forward(&mut ctx, input)?;
        let heads = self.heads.iter().map(|h| h.forward(&mut ctx, backbone)).collect::<Result<Vec<_>>>()?;
        let ForwardCtx { bindings, stats, .. } = ctx;
        Ok(ForwardPass { stages, backbone, heads, bindings, stats })
    }

    /// Single eval-mode pass returning the requested activations by tap name.
    pub fn forward_features(&self, input: &Tensor<T>, taps: &[&str]) -> std::result::Result<BTreeMap<String, Tensor<T>>, ModelError> {
        let known = self.taps();
        for name in taps {
            if !known.iter().any(|t| t.name == *name) {
                return Err(ModelError::UnknownTap(name.to_string()));
            }
        }
        let expected = [self.spec.backbone.input.0, self.spec.backbone.input.1, self.spec.backbone.input.2];
        if input.shape().len() != 4 || input.shape()[1..] != expected {
            return Err(ModelError::InvalidSpec(format!("input shape {:?} does not match {expected:?}", input.shape())));
        }
        let mut tape = Tape::new();
        let x = tape.constant(input.shape().to_vec(), input.data().to_vec())?;
        let pass = self.forward(&mut tape, x, BatchNormMode::Eval, false)?;
        let mut out = BTreeMap::new();
        for name in taps {
            let var = self.tap_var(&pass, name).expect("tap validated above");
            out.insert(name.to_string(), tape.tensor(var));
        }
        Ok(out)
    }

    pub fn tap_var(&self, pass: &ForwardPass<T>, name: &str) -> Option<Var> {
        if name == BACKBONE_TAP {
            return Some(pass.backbone);
        }
        if let Some(i) = name.strip_prefix("stage").and_then(|s| s.parse::<usize>().ok()) {
            return pass.stages.get(i.checked_sub(1)?).copied();
        }
        for (k, layers) in pass.heads.iter().enumerate() {
            for (l, &v) in layers.iter().enumerate() {
                if head_tap(k, l + 1, layers.len()) == name {
                    return Some(v);
                }
            }
        }
        None
    }

    /// The deployable network: same backbone parameters, heads dropped.
    pub fn backbone_only(&self) -> Network<T> {
        let spec = NetworkSpec { backbone: self.spec.backbone.clone(), heads: Vec::new() };
        let mut net = Network::build(spec, 0).expect("backbone spec already validated");
        let records: Vec<_> =
            self.store.named_tensors().into_iter().filter(|(n, _)| n.starts_with("backbone.")).collect();
        net.store.load_named(&records, true).expect("same backbone layout");
        net
    }
}
