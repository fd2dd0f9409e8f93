use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::{NumError, Tensor};
use crate::math::sqrt;
use crate::rng;

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a tensor.
    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(String::from(name), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect() }
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_compatible(&self, other: &BTreeMap<String, Tensor>) -> Result<(), NumError> {
        for (name, t) in &self.tensors {
            match other.get(name) {
                Some(o) if o.shape() == t.shape() => {}
                Some(o) => {
                    return Err(super::shape_err("params", alloc::format!("{name}: {:?} vs {:?}", t.shape(), o.shape())))
                }
                None => return Err(NumError::UnknownParam(name.clone())),
            }
        }
        Ok(())
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self { tensors: iter.into_iter().collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    /// Uniform on `±1/fan_in`, for complex spectral multipliers.
    Spectral { fan_in: usize },
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: &str, shape: &[usize], init: Init) -> Self {
        Self { name: String::from(name), shape: shape.to_vec(), init }
    }

    pub fn count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Draws every parameter from its own stream keyed by `(seed, name)`.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> ParamSet {
    let mut set = ParamSet::new();
    for spec in specs {
        let mut t = Tensor::zeros(&spec.shape);
        let bound = match spec.init {
            Init::Glorot { fan_in, fan_out } => sqrt(6.0 / (fan_in + fan_out).max(1) as f64),
            Init::Spectral { fan_in } => 1.0 / fan_in.max(1) as f64,
            Init::Zeros => 0.0,
        };
        if bound > 0.0 {
            let mut r = rng::stream(&[seed, rng::name_key(&spec.name)]);
            for v in t.data_mut() {
                *v = rng::uniform(&mut r, -bound, bound);
            }
        }
        set.insert(&spec.name, t);
    }
    set
}
