use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{numel, Shape};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<T>,
}

/// Serialized form of one tensor; values kept in `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f64>,
}

/// Named parameter tensors, in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    tensors: Vec<ParamTensor<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { tensors: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Shape, data: Vec<T>) -> Result<ParamId> {
        let name = name.into();
        if data.len() != numel(shape) {
            return Err(Error::Shape { op: "param", detail: format!("{name}: {} values for {shape:?}", data.len()) });
        }
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.tensors.push(ParamTensor { name, shape, data });
        Ok(id)
    }

    /// Uniform in `±1/sqrt(fan_in)`, with `fan_in` the row count.
    pub fn uniform<R: Rng + ?Sized>(&mut self, name: &str, shape: Shape, rng: &mut R) -> ParamId {
        let bound = 1.0 / (shape[1].max(1) as f64).sqrt();
        let data = (0..numel(shape)).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
        self.insert(name, shape, data).expect("fresh name")
    }

    pub fn zeros(&mut self, name: &str, shape: Shape) -> ParamId {
        self.insert(name, shape, vec![T::zero(); numel(shape)]).expect("fresh name")
    }

    pub fn filled(&mut self, name: &str, shape: Shape, v: f64) -> ParamId {
        self.insert(name, shape, vec![T::lit(v); numel(shape)]).expect("fresh name")
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensor(&self, id: ParamId) -> &ParamTensor<T> {
        &self.tensors[id.0]
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut Vec<T> {
        &mut self.tensors[id.0].data
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.id(name).map(|id| self.tensor(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor<T>)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.tensors
            .iter()
            .map(|t| TensorRecord { name: t.name.clone(), shape: t.shape, data: t.data.iter().map(|v| v.as_f64()).collect() })
            .collect()
    }

    /// Overwrites values from records; every tensor must be present with the
    /// same shape.
    pub fn load_records(&mut self, records: &[TensorRecord]) -> Result<()> {
        let by_name: BTreeMap<&str, &TensorRecord> = records.iter().map(|r| (r.name.as_str(), r)).collect();
        if by_name.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!("{} tensors in file, model has {}", by_name.len(), self.tensors.len())));
        }
        for t in &mut self.tensors {
            let r = by_name.get(t.name.as_str()).ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", t.name)))?;
            if r.shape != t.shape || r.data.len() != t.data.len() {
                return Err(Error::Checkpoint(format!("{}: shape {:?} in file, {:?} expected", t.name, r.shape, t.shape)));
            }
            t.data = r.data.iter().map(|&v| T::lit(v)).collect();
        }
        Ok(())
    }
}
