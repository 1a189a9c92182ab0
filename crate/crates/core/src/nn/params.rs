use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Init, NnError, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named parameters, ordered by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

/// Per-step leaf tensors bound from a [`ParamStore`].
pub struct Bound {
    tensors: BTreeMap<String, Tensor>,
}

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Vec<f64>>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<(), NnError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::DataLength { shape: shape.to_vec(), len: data.len() });
        }
        self.params.insert(name.into(), Param { shape: shape.to_vec(), data });
        Ok(())
    }

    pub fn init<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut R) {
        let n = shape.iter().product();
        self.params.insert(name.into(), Param { shape: shape.to_vec(), data: init.sample(n, rng) });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, p)| p.data.len()).sum()
    }

    /// Wraps every parameter in a leaf tensor; `track` decides whether
    /// gradients are recorded.
    pub fn bind(&self, track: bool) -> Bound {
        let tensors = self
            .params
            .iter()
            .map(|(k, p)| {
                let t = if track {
                    Tensor::param(p.data.clone(), &p.shape)
                } else {
                    Tensor::new(p.data.clone(), &p.shape)
                };
                (k.clone(), t.expect("stored shapes are consistent"))
            })
            .collect();
        Bound { tensors }
    }
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.tensors.get(name).ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    /// Gradients of every bound parameter that received one.
    pub fn grads(&self) -> Grads {
        self.tensors.iter().filter_map(|(k, t)| t.grad().map(|g| (k.clone(), g))).collect()
    }

    /// Names of parameters that received no gradient.
    pub fn missing_grads(&self) -> Vec<String> {
        self.tensors.iter().filter(|(_, t)| t.grad_ref().is_none()).map(|(k, _)| k.clone()).collect()
    }
}
