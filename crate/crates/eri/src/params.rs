//! Named trainable parameters with gradient slots.

use crate::error::{EriError, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;
use indexmap::IndexMap;

#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether decoupled weight decay applies (weight matrices yes,
    /// biases / layer-norm vectors / regression tokens no).
    pub decay: bool,
}

/// Hierarchically named trainable tensors, e.g. "video.gru.layer0.w_z".
/// Insertion order is preserved so iteration is deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor, decay: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(EriError::Argument(format!("duplicate parameter {name}")));
        }
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.entries
            .insert(name.to_string(), Param { value, grad, decay });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| EriError::Argument(format!("unknown parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = Tensor::zeros(p.value.rows(), p.value.cols());
        }
    }

    /// Pull gradients out of a finished graph and add them into the store,
    /// scaled by `scale`. Parameters the loss does not touch are left as-is.
    pub fn accumulate_from_graph(&mut self, graph: &Graph, scale: f64) {
        for (name, id) in graph.params() {
            if let Some(g) = graph.grad(*id) {
                let p = self
                    .entries
                    .get_mut(name)
                    .unwrap_or_else(|| panic!("graph param {name} missing from store"));
                let mut d = g.clone();
                d.scale_assign(scale);
                p.grad.add_assign(&d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_zero() {
        let mut s = ParamStore::new();
        s.register("w", Tensor::scalar(2.0), true).unwrap();
        assert!(s.register("w", Tensor::scalar(0.0), true).is_err());
        s.get_mut("w").unwrap().grad = Tensor::scalar(5.0);
        s.zero_grads();
        assert_eq!(s.get("w").unwrap().grad.item(), 0.0);
    }
}
