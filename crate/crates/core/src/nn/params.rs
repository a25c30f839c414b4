use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::tape::{Gradients, Tape};
use crate::nn::tensor::Tensor;

/// Named parameters with a parallel gradient map.
///
/// Names are unique and iteration order is lexicographic, which keeps
/// optimizer updates and checkpoints deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Option<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Validation(format!("duplicate parameter `{name}`")));
        }
        self.grads.insert(name.clone(), None);
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name).and_then(Option::as_ref)
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor) -> Result<()> {
        let p = self.get(name)?;
        if !p.same_shape(&grad) {
            return Err(Error::Dimension(format!(
                "gradient for `{name}` has shape {:?}, parameter {:?}",
                grad.shape(),
                p.shape()
            )));
        }
        self.grads.insert(name.to_string(), Some(grad));
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.values_mut() {
            *g = None;
        }
    }

    /// Gives every parameter without a gradient an explicit zero gradient
    /// (parameters the loss did not reach).
    pub fn fill_missing_grads(&mut self) {
        for (name, p) in &self.params {
            let slot = self.grads.entry(name.clone()).or_insert(None);
            if slot.is_none() {
                *slot = Some(Tensor::zeros(&[p.rows(), p.cols()]));
            }
        }
    }

    /// Adds the gradients of every parameter bound on `tape` into this store.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) -> Result<()> {
        for (name, var) in tape.bound_params() {
            let Some(g) = grads.get(*var) else { continue };
            let p = self.get(name)?;
            let g = g.clone().reshape(p.shape())?;
            match self.grads.get_mut(name.as_str()) {
                Some(Some(existing)) => existing.add_assign(&g),
                Some(slot) => *slot = Some(g),
                None => return Err(Error::UnknownParameter(name.clone())),
            }
        }
        Ok(())
    }

    /// Shapes must match name for name.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    /// Euclidean distance between two stores with the same layout.
    pub fn distance(&self, other: &ParamStore) -> Result<f64> {
        if !self.same_layout(other) {
            return Err(Error::Dimension("parameter layouts differ".into()));
        }
        let mut acc = 0.0;
        for (a, b) in self.params.values().zip(other.params.values()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                acc += (x - y) * (x - y);
            }
        }
        Ok(acc.sqrt())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}
