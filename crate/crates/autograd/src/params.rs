//! Named parameter storage.

use std::collections::BTreeMap;

use ndarray::ArrayD;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::var::{Array, Gradients, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Updated by an optimizer.
    Weight,
    /// Tracked state such as batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array,
    pub kind: ParamKind,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("parameter `{0}` missing from one of the stores")]
    Missing(String),
    #[error("parameter `{name}` has shape {left:?} in one store and {right:?} in the other")]
    ShapeMismatch { name: String, left: Vec<usize>, right: Vec<usize> },
    #[error("stores hold different parameter counts ({0} vs {1})")]
    CountMismatch(usize, usize),
}

/// Ordered map from parameter name to value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array, kind: ParamKind) {
        self.entries.insert(name.into(), Param { value, kind });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> &Array {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn set_value(&mut self, name: &str, value: Array) {
        let p = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        assert_eq!(p.value.shape(), value.shape(), "shape change for `{name}`");
        p.value = value;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    /// Number of scalar weights (buffers excluded).
    pub fn num_weights(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.kind == ParamKind::Weight)
            .map(|p| p.value.len())
            .sum()
    }

    /// Copy of the entries whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Insert or overwrite every entry of `other`.
    pub fn merge(&mut self, other: &ParamStore) {
        for (k, v) in other.iter() {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Verify `other` holds exactly the same names and shapes.
    pub fn check_same_layout(&self, other: &ParamStore) -> Result<(), ParamError> {
        if self.len() != other.len() {
            return Err(ParamError::CountMismatch(self.len(), other.len()));
        }
        for (name, p) in &self.entries {
            let q = other.get(name).ok_or_else(|| ParamError::Missing(name.clone()))?;
            if p.value.shape() != q.value.shape() {
                return Err(ParamError::ShapeMismatch {
                    name: name.clone(),
                    left: p.value.shape().to_vec(),
                    right: q.value.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian values of the entries
    /// whose names start with `prefix` (empty prefix: everything).
    pub fn digest(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, p) in self.entries.iter().filter(|(k, _)| k.starts_with(prefix)) {
            h.update(name.as_bytes());
            h.update([0u8]);
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Wrap values as graph leaves. Weights whose name satisfies `trainable`
    /// become gradient-tracking leaves; everything else is constant.
    pub fn bind(&self, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, p)| {
                let v = if p.kind == ParamKind::Weight && trainable(k) {
                    Var::leaf(p.value.clone())
                } else {
                    Var::constant(p.value.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    pub fn bind_all(&self) -> Bound {
        self.bind(|_| true)
    }

    pub fn bind_frozen(&self) -> Bound {
        self.bind(|_| false)
    }
}

/// Parameters of one forward pass, as graph leaves.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> &Var {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    /// Gradients of all tracked leaves, keyed by parameter name. Leaves the
    /// output did not depend on get zeros.
    pub fn grads(&self, g: &Gradients) -> BTreeMap<String, Array> {
        self.vars
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(k, v)| (k.clone(), g.get(v).cloned().unwrap_or_else(|| ArrayD::zeros(v.value().raw_dim()))))
            .collect()
    }
}
