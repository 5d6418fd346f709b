//! Named trainable parameters and their binding into compute graphs.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value: value.with_requires_grad(true),
        });
        ParamId(self.params.len() - 1)
    }

    /// Normal init with standard deviation `sqrt(gain / fan_in)`.
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let std = (gain / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let value = Tensor::from_fn(shape.to_vec(), |_| normal.sample(rng));
        self.add(name, value)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Leaf for `id` in `g`; repeated calls within one graph share the leaf.
    pub fn bind(&self, g: &mut Graph, id: ParamId) -> Var {
        g.bind(id.0, &self.params[id.0].value)
    }

    /// Adds the gradients accumulated on bound leaves into the parameters.
    pub fn collect_grads(&mut self, g: &Graph) {
        for (key, var) in g.bindings() {
            if let Some(grad) = g.grad(var) {
                self.params[key].value.accumulate_grad(grad);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.zero_grad());
    }
}
