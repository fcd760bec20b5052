use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Named trainable tensors. Iteration is in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.entries.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::ShapeMismatch {
                op: "ParamSet",
                expected: alloc::format!("{:?}", self.names()),
                found: alloc::format!("{:?}", other.names()),
            });
        }
        for (name, t) in &self.entries {
            let o = other.get(name)?;
            if o.shape() != t.shape() {
                return Err(shape_err("ParamSet", t.shape(), o.shape()));
            }
        }
        Ok(())
    }

    /// `self += alpha * other`, entry by entry.
    pub fn axpy(&mut self, alpha: f64, other: &ParamSet) -> Result<()> {
        self.check_compatible(other)?;
        for (name, t) in self.entries.iter_mut() {
            let o = &other.entries[name];
            for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                *a += alpha * b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.entries.values_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        libm::sqrt(
            self.entries
                .values()
                .flat_map(|t| t.data().iter())
                .map(|v| v * v)
                .sum(),
        )
    }

    /// Order-sensitive digest of the exact bit patterns of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for (name, t) in &self.entries {
            for b in name.bytes() {
                eat(b as u64);
            }
            for &d in t.shape() {
                eat(d as u64);
            }
            for v in t.data() {
                eat(v.to_bits());
            }
        }
        h
    }

    /// Concatenation of every entry's values, in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten) against this set's layout.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.numel() {
            return Err(shape_err("ParamSet::with_flat", &[self.numel()], &[flat.len()]));
        }
        let mut out = self.clone();
        let mut off = 0;
        for t in out.entries.values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(out)
    }
}
