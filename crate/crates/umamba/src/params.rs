//! Named parameter store.
//!
//! All learnable tensors live here in registration order. That order is the
//! canonical layout everywhere downstream: tape leaf ids, optimizer moment
//! buffers, and checkpoint offsets all index parameters the same way, which is
//! what makes gradient accumulation and serialization deterministic.

use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type ParamId = usize;

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    /// Total scalar count across all parameters.
    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Register every parameter on a tape, in store order, so that the leaf
    /// for parameter `p` is always `leaves[p]`.
    pub fn leaves_on(&self, tape: &mut Tape) -> Vec<VarId> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Overwrite every tensor from a name-keyed source, e.g. a checkpoint.
    pub fn load_from(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: store has {}, source has {}",
                self.len(),
                entries.len()
            )));
        }
        for (name, tensor) in entries {
            let id = self.id_of(name).ok_or_else(|| {
                Error::Checkpoint(format!("unknown parameter {name} in source"))
            })?;
            if self.tensors[id].shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: store {:?}, source {:?}",
                    self.tensors[id].shape(),
                    tensor.shape()
                )));
            }
            self.tensors[id] = tensor.clone();
        }
        Ok(())
    }

    /// Verify every stored value is finite; names the offender.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.iter() {
            if !t.is_finite() {
                return Err(Error::Numeric(format!("parameter {name} contains non-finite values")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_order_is_stable() {
        let mut store = ParamStore::new();
        let a = store.register("a", Tensor::zeros(vec![2]));
        let b = store.register("b", Tensor::zeros(vec![3]));
        assert_eq!((a, b), (0, 1));
        assert_eq!(store.name(0), "a");
        assert_eq!(store.total_scalars(), 5);
    }

    #[test]
    fn load_from_rejects_shape_change() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros(vec![2, 2]));
        let err = store
            .load_from(&[("w".into(), Tensor::zeros(vec![3]))])
            .unwrap_err();
        assert!(err.to_string().contains("shape mismatch"));
    }
}
