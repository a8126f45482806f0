use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Shape(format!("tensor rank must be 1..=3, got {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            grad: vec![0.0; len],
            shape,
            values,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len]).expect("consistent length")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Which side of the federation a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Uploaded to and overwritten by the server.
    Shared,
    /// Never leaves the client under the personalized protocol.
    Local,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub partition: Partition,
    pub tensor: Tensor,
}

/// Named model parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamRegistry {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, partition: Partition, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Data(format!("duplicate parameter name {name:?}")));
        }
        let idx = self.params.len();
        self.index.insert(name.clone(), idx);
        self.params.push(Param {
            name,
            partition,
            tensor,
        });
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.position(name).map(move |i| &mut self.params[i])
    }

    pub fn require(&self, name: &str) -> Result<&Param> {
        self.get(name)
            .ok_or_else(|| Error::Data(format!("unknown parameter {name:?}")))
    }

    pub fn at(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn names(&self, partition: Option<Partition>) -> Vec<String> {
        self.params
            .iter()
            .filter(|p| partition.is_none_or(|want| p.partition == want))
            .map(|p| p.name.clone())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Copies of the selected tensors' values, keyed by name.
    pub fn snapshot(&self, partition: Option<Partition>) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter(|p| partition.is_none_or(|want| p.partition == want))
            .map(|p| {
                let mut t = p.tensor.clone();
                t.zero_grad();
                (p.name.clone(), t)
            })
            .collect()
    }

    /// Overwrites the values of every named tensor; shapes must match.
    pub fn assign(&mut self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, t) in values {
            let p = self
                .get_mut(name)
                .ok_or_else(|| Error::Protocol(format!("unknown parameter {name:?}")))?;
            if p.tensor.shape() != t.shape() {
                return Err(Error::Protocol(format!(
                    "parameter {name:?}: shape {:?} vs incoming {:?}",
                    p.tensor.shape(),
                    t.shape()
                )));
            }
            p.tensor.values_mut().copy_from_slice(t.values());
        }
        Ok(())
    }
}
