use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    pub grad: Option<Tensor>,
}

/// Low-rank adapter bound to a `d_in x d_out` weight `W` (used as `x·W`).
///
/// `down` is `r x d_in`, `up` is `d_out x r`; the effective weight is
/// `W + (alpha / r) · (up · down)ᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub target: String,
    pub rank: usize,
    pub alpha: f64,
    pub down: String,
    pub up: String,
}

impl LoraAdapter {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Named parameters in insertion order. Removed entries leave a hole so ids
/// stay stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Option<Param>>,
    by_name: BTreeMap<String, ParamId>,
    adapters: BTreeMap<String, LoraAdapter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(alloc::format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Some(Param {
            name: name.to_string(),
            value,
            trainable,
            grad: None,
        }));
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn remove(&mut self, name: &str) -> Result<Param> {
        let id = self
            .by_name
            .remove(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        Ok(self.params[id.0].take().expect("name map points at live slot"))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        self.params[id.0].as_ref().expect("stale parameter id")
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        self.params[id.0].as_mut().expect("stale parameter id")
    }

    pub fn by_name(&self, name: &str) -> Result<&Param> {
        Ok(self.get(self.id(name)?))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.get(id).value
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let id = self.id(name)?;
        self.get_mut(id).trainable = trainable;
        Ok(())
    }

    /// Live parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (ParamId(i), p)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params
            .iter_mut()
            .enumerate()
            .filter_map(|(i, p)| p.as_mut().map(|p| (ParamId(i), p)))
    }

    /// Total number of scalar parameters, optionally only the trainable ones.
    pub fn count(&self, trainable_only: bool) -> usize {
        self.iter()
            .filter(|(_, p)| !trainable_only || p.trainable)
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// Adds `grad` into the parameter's gradient slot. Frozen parameters are
    /// left untouched.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) -> Result<()> {
        let p = self.get_mut(id);
        if !p.trainable {
            return Ok(());
        }
        if p.value.shape() != grad.shape() {
            return Err(Error::Shape {
                op: "accumulate_grad",
                lhs: p.value.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        match &mut p.grad {
            Some(g) => g.add_assign(grad)?,
            None => p.grad = Some(grad.clone()),
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.iter_mut() {
            p.grad = None;
        }
    }

    /// Global L2 norm over all populated gradient slots.
    pub fn grad_norm(&self) -> f64 {
        libm::sqrt(
            self.iter()
                .filter_map(|(_, p)| p.grad.as_ref())
                .map(Tensor::sq_norm)
                .sum(),
        )
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let c = max_norm / norm;
            for (_, p) in self.iter_mut() {
                if let Some(g) = &mut p.grad {
                    for v in g.data_mut() {
                        *v *= c;
                    }
                }
            }
        }
        norm
    }

    pub fn adapter(&self, target: &str) -> Option<&LoraAdapter> {
        self.adapters.get(target)
    }

    pub fn adapters(&self) -> impl Iterator<Item = &LoraAdapter> {
        self.adapters.values()
    }

    /// Re-binds an adapter whose `down`/`up` weights are already stored, as
    /// when loading a checkpoint. Shapes must agree with the target.
    pub fn restore_adapter(&mut self, adapter: LoraAdapter) -> Result<()> {
        let (d_in, d_out) = {
            let w = &self.by_name(&adapter.target)?.value;
            (w.rows(), w.cols())
        };
        let down = self.by_name(&adapter.down)?.value.shape().to_vec();
        let up = self.by_name(&adapter.up)?.value.shape().to_vec();
        if adapter.rank == 0 || down != [adapter.rank, d_in] || up != [d_out, adapter.rank] {
            return Err(Error::Config(alloc::format!(
                "adapter on `{}` has inconsistent shapes: down {down:?}, up {up:?}",
                adapter.target
            )));
        }
        if self.adapters.contains_key(&adapter.target) {
            return Err(Error::Config(alloc::format!("`{}` already has an adapter", adapter.target)));
        }
        self.insert_adapter(adapter);
        Ok(())
    }

    pub(crate) fn insert_adapter(&mut self, adapter: LoraAdapter) {
        self.adapters.insert(adapter.target.clone(), adapter);
    }

    pub(crate) fn remove_adapter(&mut self, target: &str) -> Option<LoraAdapter> {
        self.adapters.remove(target)
    }

    pub fn names(&self) -> Vec<String> {
        self.iter().map(|(_, p)| p.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_params_ignore_gradients() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::zeros(1, 2), false).unwrap();
        s.accumulate_grad(a, &Tensor::from_rows(1, 2, alloc::vec![1.0, 2.0]).unwrap())
            .unwrap();
        assert!(s.get(a).grad.is_none());
    }

    #[test]
    fn removal_keeps_ids_stable() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(1, 1), true).unwrap();
        let b = s.insert("b", Tensor::zeros(2, 2), true).unwrap();
        s.remove("a").unwrap();
        assert_eq!(s.id("b").unwrap(), b);
        assert_eq!(s.count(false), 4);
        assert!(s.id("a").is_err());
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::zeros(1, 2), true).unwrap();
        s.accumulate_grad(a, &Tensor::from_rows(1, 2, alloc::vec![3.0, 4.0]).unwrap())
            .unwrap();
        assert_eq!(s.clip_grad_norm(1.0), 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-12);
    }
}
