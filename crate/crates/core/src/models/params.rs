use crate::tensor::{Result, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Weight decay covers weights and biases, not norm affine terms.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Flat, ordered parameter and buffer storage for one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub(crate) fn add(&mut self, name: String, kind: ParamKind, tensor: Tensor<T>) -> ParamId {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        let tensor = tensor.with_requires_grad(kind.trainable());
        self.params.push(Param { name, kind, tensor });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Copies leaf gradients off `tape` into each bound parameter's grad slot.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bindings: &[(ParamId, Var)]) -> Result<()> {
        for &(id, var) in bindings {
            if let Some(g) = tape.grad(var) {
                self.params[id.0].tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Overwrites values from `(name, tensor)` records. Names not present here are errors;
    /// with `require_all`, every local parameter must be supplied.
    pub fn load_named(&mut self, records: &[(String, Tensor<T>)], require_all: bool) -> Result<()> {
        for (name, t) in records {
            let p = self.by_name_mut(name).ok_or_else(|| TensorError::Invalid {
                op: "load_params",
                detail: format!("unknown parameter `{name}`"),
            })?;
            if p.tensor.shape() != t.shape() {
                return Err(TensorError::Shape {
                    op: "load_params",
                    detail: format!("`{name}`: stored {:?}, expected {:?}", t.shape(), p.tensor.shape()),
                });
            }
            p.tensor.data_mut().copy_from_slice(t.data());
        }
        if require_all {
            if let Some(missing) = self.params.iter().find(|p| !records.iter().any(|(n, _)| n == &p.name)) {
                return Err(TensorError::Invalid {
                    op: "load_params",
                    detail: format!("missing parameter `{}`", missing.name),
                });
            }
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), Tensor::new(p.tensor.shape().to_vec(), p.tensor.data().to_vec()).expect("consistent")))
            .collect()
    }
}
