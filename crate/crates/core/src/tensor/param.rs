use std::sync::{Arc, RwLock};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// A trainable array. Forward passes read the current leaf tensor; the
/// optimizer swaps in a fresh leaf after each update.
#[derive(Clone, Debug)]
pub struct Var<T: Real = f32> {
    inner: Arc<RwLock<Tensor<T>>>,
}

impl<T: Real> Var<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Ok(Var {
            inner: Arc::new(RwLock::new(Tensor::leaf(shape, data)?)),
        })
    }

    pub fn tensor(&self) -> Tensor<T> {
        self.inner.read().expect("poisoned parameter lock").clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tensor().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tensor().numel()
    }

    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        let mut guard = self.inner.write().expect("poisoned parameter lock");
        let shape = guard.shape().to_vec();
        *guard = Tensor::leaf(&shape, data)?;
        Ok(())
    }
}

/// Insertion-ordered registry of named parameters.
#[derive(Clone, Debug, Default)]
pub struct Params<T: Real = f32> {
    vars: Vec<(String, Var<T>)>,
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Params { vars: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, var: Var<T>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::InvalidInput(format!("duplicate parameter `{name}`")));
        }
        self.vars.push((name, var));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Var<T>> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var<T>)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.vars.iter().all(|(_, v)| v.tensor().all_finite())
    }
}
