use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Stable handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable array with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub path: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of named parameters.
///
/// Insertion order is the iteration order everywhere (checkpoints, optimizer
/// state, gradient reduction), which keeps every run deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_path: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let path = path.into();
        if self.by_path.contains_key(&path) {
            return Err(Error::Parameter(format!("duplicate parameter path {path}")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.by_path.insert(path.clone(), id);
        self.params.push(Parameter { path, value, grad });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, path: &str) -> Option<ParamId> {
        self.by_path.get(path).copied()
    }

    pub fn by_path(&self, path: &str) -> Option<&Parameter> {
        self.id(path).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::dim("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Adds `grads[i]` into parameter `i`'s gradient. `grads` must be ordered like the store.
    pub fn accumulate(&mut self, grads: &GradBuffer) -> Result<()> {
        if grads.0.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "gradient buffer has {} entries, store has {}",
                grads.0.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                let sum: Vec<f64> = p.grad.data().iter().zip(g).map(|(a, b)| a + b).collect();
                p.grad = Tensor::from_parts(p.value.shape().to_vec(), sum);
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().flat_map(|p| p.grad.data().iter()).map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad = p.grad.map(|g| g * factor);
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }
}

/// Per-parameter gradient contributions, ordered like the owning store.
///
/// `None` marks a parameter that the graph never touched.
#[derive(Clone, Debug, Default)]
pub struct GradBuffer(pub(crate) Vec<Option<Vec<f64>>>);

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self(vec![None; store.len()])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0[id.0].as_deref()
    }

    /// In-place `self += other`, entry by entry in store order.
    pub fn add_assign(&mut self, other: &GradBuffer) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.0.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_paths_rejected() {
        let mut s = ParamStore::new();
        s.insert("a.w", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a.w", Tensor::zeros(&[3])).is_err());
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn accumulate_adds() {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::zeros(&[2])).unwrap();
        let buf = GradBuffer(vec![Some(vec![1.0, -2.0])]);
        s.accumulate(&buf).unwrap();
        s.accumulate(&buf).unwrap();
        assert_eq!(s.get(id).grad.data(), &[2.0, -4.0]);
        s.zero_grads();
        assert_eq!(s.get(id).grad.data(), &[0.0, 0.0]);
    }
}
