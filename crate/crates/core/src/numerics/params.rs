use rand::Rng as _;
use rand_distr::StandardNormal;

use super::graph::{Grads, Graph, Var};
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_index(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor as a graph leaf, in insertion order.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, requires_grad: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t, requires_grad)).collect()
    }

    /// Gradients for each parameter, aligned with insertion order.
    pub fn collect_grads(&self, grads: &Grads, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| grads.get(v)).collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (n, t) in self.names.iter().zip(&self.tensors) {
            if !t.is_finite() {
                return Err(Error::NumericFailure(format!("parameter {n} is not finite")));
            }
        }
        Ok(())
    }
}

/// Gaussian initialization with standard deviation `std`.
pub fn init_normal(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Element-wise sum of gradient lists, in order.
pub fn accumulate(into: &mut [Tensor], add: &[Tensor]) {
    for (a, b) in into.iter_mut().zip(add) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += y;
        }
    }
}
