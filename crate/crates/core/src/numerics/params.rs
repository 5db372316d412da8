use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::NumericError;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    first_moment: Tensor<T>,
    second_moment: Tensor<T>,
}

/// Named learnable tensors plus their Adam moment estimates.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    index: BTreeMap<String, ParamId>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, NumericError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumericError::DuplicateParam(name));
        }
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.clone(),
            first_moment: value.zeros_like(),
            second_moment: value.zeros_like(),
            value,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.value(id))
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<(), NumericError> {
        let id = self
            .id(name)
            .ok_or_else(|| NumericError::UnknownParam(name.to_string()))?;
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(NumericError::shape("set", entry.value.shape(), value.shape()));
        }
        entry.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// `(id, name)` in registration order.
    pub fn iter_ids(&self) -> impl Iterator<Item = (ParamId, &str)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str()))
    }

    /// `(name, value)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// Sum of squared entries over every parameter.
    pub fn squared_norm(&self) -> T {
        self.entries.iter().map(|e| e.value.squared_norm()).sum()
    }

    pub(crate) fn adam_parts(&mut self) -> (&mut u64, impl Iterator<Item = AdamSlot<'_, T>>) {
        let slots = self.entries.iter_mut().map(|e| AdamSlot {
            name: &e.name,
            value: &mut e.value,
            m: &mut e.first_moment,
            v: &mut e.second_moment,
        });
        (&mut self.step, slots)
    }
}

pub(crate) struct AdamSlot<'a, T> {
    pub name: &'a str,
    pub value: &'a mut Tensor<T>,
    pub m: &'a mut Tensor<T>,
    pub v: &'a mut Tensor<T>,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    by_name: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new(by_name: BTreeMap<String, Tensor<T>>) -> Self {
        Gradients { by_name }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.by_name.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_finite(&self) -> bool {
        self.by_name.values().all(Tensor::is_finite)
    }

    /// Adds `other` entry-wise; names missing here are copied over.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (name, g) in &other.by_name {
            match self.by_name.get_mut(name) {
                Some(mine) => mine.add_assign(g),
                None => {
                    self.by_name.insert(name.clone(), g.clone());
                }
            }
        }
    }
}
