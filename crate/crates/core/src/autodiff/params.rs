use std::collections::BTreeMap;

use super::tape::{Gradients, Tape};
use super::{AutodiffError, Tensor};

/// One trainable array plus its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub(crate) first_moment: Vec<f64>,
    pub(crate) second_moment: Vec<f64>,
    pub(crate) step: u64,
    pub frozen: bool,
}

impl ParamEntry {
    fn new(value: Tensor) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
            frozen: false,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Named network weights, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), AutodiffError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        self.entries.insert(name, ParamEntry::new(value));
        Ok(())
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
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

    /// Total number of scalar weights.
    pub fn n_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Replace a value. Shapes must match and the entry must not be frozen.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<(), AutodiffError> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        if e.frozen {
            return Err(AutodiffError::Frozen(name.to_string()));
        }
        if e.value.shape() != value.shape() {
            return Err(AutodiffError::Shape(format!(
                "{name}: {:?} vs {:?}",
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for (name, e) in &mut self.entries {
            if name.starts_with(prefix) {
                e.frozen = frozen;
                n += 1;
            }
        }
        n
    }

    /// Clear moments and step counts, e.g. between training stages.
    pub fn reset_optimizer(&mut self) {
        for e in self.entries.values_mut() {
            e.first_moment.iter_mut().for_each(|v| *v = 0.0);
            e.second_moment.iter_mut().for_each(|v| *v = 0.0);
            e.step = 0;
        }
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Add the gradients of every parameter bound on `tape`.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) -> Result<(), AutodiffError> {
        for (name, var) in tape.bindings() {
            let e = self
                .entries
                .get_mut(name)
                .ok_or_else(|| AutodiffError::UnknownParam(name.clone()))?;
            if e.frozen {
                return Err(AutodiffError::Frozen(name.clone()));
            }
            if let Some(g) = grads.get(*var) {
                e.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        Ok(())
    }

    /// Order-dependent FNV-1a digest over names and value bits under `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, e) in self.entries.range(prefix.to_string()..) {
            if !name.starts_with(prefix) {
                break;
            }
            eat(name.as_bytes());
            for v in e.value.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Copy values for every name present in both stores.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<usize, AutodiffError> {
        let mut n = 0;
        for (name, e) in &mut self.entries {
            if let Some(src) = other.entries.get(name) {
                if src.value.shape() != e.value.shape() {
                    return Err(AutodiffError::Shape(format!(
                        "{name}: checkpoint {:?} vs model {:?}",
                        src.value.shape(),
                        e.value.shape()
                    )));
                }
                e.value = src.value.clone();
                n += 1;
            }
        }
        Ok(n)
    }
}
