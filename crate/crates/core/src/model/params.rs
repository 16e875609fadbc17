use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::num::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Visual backbone, shared by both pathways.
    Backbone,
    Adapter,
    /// Output projection `W_o` merging the two pathway embeddings.
    Fusion,
    Text,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

impl Group {
    pub fn trainable(self) -> bool {
        self != Group::Buffer
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    /// `[I; I] / 2`: averages the two stacked halves.
    HalfStackedEye,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<S> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<S>,
}

/// Named parameters in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register<R: Rng>(&mut self, name: &str, shape: &[usize], group: Group, init: Init, rng: &mut R) -> usize {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let n: usize = shape.iter().product();
        let data: Vec<S> = match init {
            Init::Zeros => vec![S::zero(); n],
            Init::Ones => vec![S::one(); n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| S::of(d.sample(rng))).collect()
            }
            Init::FanIn(fan) => {
                let a = 1.0 / (fan.max(1) as f64).sqrt();
                (0..n).map(|_| S::of(rng.gen_range(-a..a))).collect()
            }
            Init::HalfStackedEye => {
                assert!(shape.len() == 2 && shape[0] == 2 * shape[1]);
                let d = shape[1];
                let mut v = vec![S::zero(); n];
                for i in 0..d {
                    v[i * d + i] = S::of(0.5);
                    v[(d + i) * d + i] = S::of(0.5);
                }
                v
            }
        };
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group,
            value: Tensor::new(shape.to_vec(), data).expect("shape matches data"),
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> &ParamEntry<S> {
        &self.entries[id]
    }

    pub fn value(&self, id: usize) -> &Tensor<S> {
        &self.entries[id].value
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor<S> {
        &mut self.entries[id].value
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|i| &self.entries[i].value)
    }

    /// Scalar count per group, buffers included under [`Group::Buffer`].
    pub fn count_by_group(&self) -> HashMap<Group, usize> {
        let mut out = HashMap::new();
        for e in &self.entries {
            *out.entry(e.group).or_insert(0) += e.value.numel();
        }
        out
    }

    /// Overwrites every value from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore<S>) -> Result<(), ModelError> {
        if other.len() != self.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for e in &mut self.entries {
            let src = other
                .get(&e.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {}", e.name)))?;
            if src.shape() != e.value.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name,
                    src.shape(),
                    e.value.shape()
                )));
            }
            e.value = src.clone();
        }
        Ok(())
    }

    /// Store from `(name, group, tensor)` triples, in order.
    pub fn from_entries(entries: Vec<ParamEntry<S>>) -> Result<Self, ModelError> {
        let mut index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.name.clone(), i).is_some() {
                return Err(ModelError::Checkpoint(format!("duplicate tensor {}", e.name)));
            }
        }
        Ok(Self { entries, index })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::<f64>::new();
        let e = s.register("wo", &[4, 2], Group::Fusion, Init::HalfStackedEye, &mut rng);
        assert_eq!(s.value(e).data(), &[0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5]);
        let f = s.register("w", &[16, 4], Group::Backbone, Init::FanIn(16), &mut rng);
        assert!(s.value(f).data().iter().all(|v| v.abs() <= 0.25));
        s.register("m", &[3], Group::Buffer, Init::Zeros, &mut rng);
        let c = s.count_by_group();
        assert_eq!(c[&Group::Fusion], 8);
        assert_eq!(c[&Group::Buffer], 3);
        assert!(!Group::Buffer.trainable());
    }

    #[test]
    fn load_checks_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = ParamStore::<f64>::new();
        a.register("x", &[2], Group::Text, Init::Ones, &mut rng);
        let mut b = ParamStore::<f64>::new();
        b.register("x", &[3], Group::Text, Init::Ones, &mut rng);
        assert!(a.load_from(&b).is_err());
        let mut c = ParamStore::<f64>::new();
        c.register("x", &[2], Group::Text, Init::Zeros, &mut rng);
        a.load_from(&c).unwrap();
        assert_eq!(a.value(0).data(), &[0.0, 0.0]);
    }
}
