use super::network::{Network, NetworkSpec};
use super::ModelError;
use crate::data::Checkpoint;
use crate::tensor::Scalar;

/// Metadata key holding the JSON network spec.
pub const SPEC_KEY: &str = "network.spec";

impl<T: Scalar> Network<T> {
    /// Spec plus every parameter (backbone records under `backbone.`, head `k` under `head{k}.`).
    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut ckpt = Checkpoint::new();
        ckpt.meta.insert(SPEC_KEY.into(), serde_json::to_string(self.spec()).expect("spec serializes"));
        ckpt.records = self.store.named_tensors();
        ckpt
    }

    /// Rebuilds the network described by a checkpoint. Records that are not parameters
    /// (optimizer state, extras) are ignored; every parameter must be present.
    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self, ModelError> {
        Self::restore(ckpt, read_spec(ckpt)?)
    }

    /// Backbone alone, with any stored heads left unread.
    pub fn backbone_from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self, ModelError> {
        let spec = read_spec(ckpt)?;
        Self::restore(ckpt, NetworkSpec { backbone: spec.backbone, heads: Vec::new() })
    }

    fn restore(ckpt: &Checkpoint<T>, spec: NetworkSpec) -> Result<Self, ModelError> {
        let mut net = Network::build(spec, 0)?;
        let records: Vec<_> =
            ckpt.records.iter().filter(|(name, _)| net.store.by_name(name).is_some()).cloned().collect();
        net.store.load_named(&records, true)?;
        Ok(net)
    }
}

pub fn read_spec<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<NetworkSpec, ModelError> {
    let text = ckpt.meta.get(SPEC_KEY).ok_or_else(|| ModelError::InvalidSpec(format!("checkpoint has no `{SPEC_KEY}`")))?;
    serde_json::from_str(text).map_err(|e| ModelError::InvalidSpec(format!("bad stored spec: {e}")))
}
