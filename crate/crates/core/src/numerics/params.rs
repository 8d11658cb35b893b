use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of learnable tensors. Order is the canonical
/// manifest order used by the optimizer and by checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
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

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Put every parameter on `graph`; `trainable` selects gradient leaves.
    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> Bound<'g> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.param(t)
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters placed on a graph, addressed by [`ParamId`].
pub struct Bound<'g> {
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn get(&self, id: ParamId) -> Var<'g> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }

    pub fn from_vars(vars: Vec<Var<'g>>) -> Self {
        Bound { vars }
    }

    /// Gradients after `graph.backward`, in store order.
    pub fn grads(&self, graph: &Graph) -> Vec<Tensor> {
        self.vars.iter().map(|&v| graph.grad(v)).collect()
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in) initialization.
pub fn uniform_fan_in(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}
