//! Named parameter tensors, partitioned into the shared feature extractor
//! and per-task heads.

use std::collections::BTreeMap;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::task::TaskId;

/// Prefix of every feature-extractor parameter name.
pub const THETA_PREFIX: &str = "theta.";

/// Prefix of the head parameters of `task`.
pub fn head_prefix(task: TaskId) -> String {
    format!("head.{}.", task.name())
}

/// Which partition a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Theta,
    Head(TaskId),
}

impl ParamGroup {
    pub fn of(name: &str) -> Option<Self> {
        if name.starts_with(THETA_PREFIX) {
            return Some(ParamGroup::Theta);
        }
        TaskId::ALL
            .into_iter()
            .find(|&t| name.starts_with(&head_prefix(t)))
            .map(ParamGroup::Head)
    }
}

/// Ordered map from parameter name to value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Names must start with [`THETA_PREFIX`] or a head prefix.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if ParamGroup::of(&name).is_none() {
            return Err(Error::UnknownParam(name));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`; those rejected by `trainable` are
    /// recorded as constants and receive no gradient.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: impl Fn(&str) -> bool) -> Bound<'t> {
        let vars = self
            .entries
            .iter()
            .map(|(name, value)| {
                let v = if trainable(name) {
                    tape.leaf(name.as_str(), value.clone())
                } else {
                    tape.constant(value.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Same names and shapes as `self`, filled with zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Errors unless `other` has exactly the same names and shapes.
    pub fn check_aligned(&self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape(
                "param alignment",
                format!("{} vs {} entries", self.entries.len(), other.entries.len()),
            ));
        }
        for (name, value) in &self.entries {
            let o = other.get(name)?;
            if o.shape() != value.shape() {
                return Err(Error::shape(
                    "param alignment",
                    format!("{name}: {:?} vs {:?}", value.shape(), o.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Gradients as a store aligned with `self`; missing gradients are zero.
    pub fn aligned_gradients(&self, grads: &Gradients) -> ParamStore {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| {
                    let g = grads.get(k).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()));
                    (k.clone(), g)
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    #[cfg(test)]
    pub(crate) fn from_vars(vars: BTreeMap<String, Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }
}

/// Per-parameter nonnegative strengths produced after training one task.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    pub task: TaskId,
    pub omega: ParamStore,
}

impl ImportanceMap {
    /// Absolute values of `grads`, aligned with `params`.
    pub fn from_gradients(task: TaskId, params: &ParamStore, grads: &Gradients) -> Self {
        let mut omega = params.aligned_gradients(grads);
        for (_, t) in omega.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = v.abs());
        }
        Self { task, omega }
    }

    /// Entries over the feature extractor.
    pub fn theta(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.omega
            .iter()
            .filter(|(n, _)| ParamGroup::of(n) == Some(ParamGroup::Theta))
    }

    /// Entries over the task heads.
    pub fn heads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.omega
            .iter()
            .filter(|(n, _)| matches!(ParamGroup::of(n), Some(ParamGroup::Head(_))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_follow_prefixes() {
        assert_eq!(ParamGroup::of("theta.fc.w"), Some(ParamGroup::Theta));
        assert_eq!(ParamGroup::of("head.ma.w1"), Some(ParamGroup::Head(TaskId::Ma)));
        assert_eq!(ParamGroup::of("other"), None);
        assert!(ParamStore::new().insert("w", Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut p = ParamStore::new();
        p.insert("theta.a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        p.insert("head.pf.b", Tensor::vector(vec![3.0, 4.0])).unwrap();
        let tape = Tape::new();
        let bound = p.bind(&tape, |n| n.starts_with(THETA_PREFIX));
        let loss = bound.get("theta.a").unwrap().mul(&bound.get("head.pf.b").unwrap()).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        let aligned = p.aligned_gradients(&grads);
        assert_eq!(aligned.get("theta.a").unwrap().data(), &[3.0, 4.0]);
        assert_eq!(aligned.get("head.pf.b").unwrap().data(), &[0.0, 0.0]);
    }
}
