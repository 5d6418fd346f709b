use std::collections::HashMap;
use std::rc::Rc;

use super::{Result, Tensor, TensorError};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Local derivative rule of a recorded operation.
///
/// `backward` receives the forward input values, the forward output value and
/// the upstream gradient, and returns one gradient per input. Entries for
/// which `needs[i]` is false may be `None`.
pub trait GradFn {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&[f64]],
        output: &[f64],
        grad: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    inputs: Vec<Var>,
    func: Option<Box<dyn GradFn>>,
    requires_grad: bool,
    leaf: bool,
}

/// Append-only compute graph. Node order is a topological order by
/// construction, so backward is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: HashMap<usize, Vec<f64>>,
    bindings: HashMap<usize, Var>,
    inference: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph in which no leaf requires gradients, so no derivative state
    /// is recorded. Used for evaluation-only forward passes.
    pub fn inference() -> Self {
        Graph {
            inference: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients accumulate on it when `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let requires_grad = t.requires_grad() && !self.inference;
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), requires_grad)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn constant_from(&mut self, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::dim("constant", &shape, &[data.len()]));
        }
        Ok(self.push_leaf(shape, data, false))
    }

    /// Records a trainable leaf keyed by `key`, reusing the existing leaf if
    /// the key was already bound in this graph.
    pub fn bind(&mut self, key: usize, t: &Tensor) -> Var {
        if let Some(&v) = self.bindings.get(&key) {
            return v;
        }
        let v = self.push_leaf(t.shape().to_vec(), t.data().to_vec(), !self.inference);
        self.bindings.insert(key, v);
        v
    }

    /// Keys and leaves registered through [`Graph::bind`].
    pub fn bindings(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.bindings.iter().map(|(&k, &v)| (k, v))
    }

    fn push_leaf(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            data: Rc::new(data),
            inputs: Vec::new(),
            func: None,
            requires_grad,
            leaf: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[Var],
        func: impl GradFn + 'static,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push_rc(shape, Rc::new(data), inputs, func)
    }

    pub(crate) fn push_rc(
        &mut self,
        shape: Vec<usize>,
        data: Rc<Vec<f64>>,
        inputs: &[Var],
        func: impl GradFn + 'static,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            data,
            inputs: if requires_grad {
                inputs.to_vec()
            } else {
                Vec::new()
            },
            func: if requires_grad {
                Some(Box::new(func))
            } else {
                None
            },
            requires_grad,
            leaf: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a custom operation. Used by modules outside the tensor core
    /// to register fused kernels with their own derivative rule.
    pub fn custom(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[Var],
        func: impl GradFn + 'static,
    ) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::dim(func.name(), &shape, &[data.len()]));
        }
        Ok(self.push(shape, data, inputs, func))
    }

    pub(crate) fn rc_data(&self, v: Var) -> Rc<Vec<f64>> {
        Rc::clone(&self.nodes[v.0].data)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(&v.0).map(Vec::as_slice)
    }

    /// Materializes a node as a [`Tensor`], carrying the leaf gradient.
    pub fn tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        let mut t = Tensor::new(node.shape.clone(), node.data.as_ref().clone())
            .expect("node shape is consistent")
            .with_requires_grad(node.requires_grad);
        if let Some(g) = self.grad(v) {
            t.accumulate_grad(g);
        }
        t
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.clear();
    }

    /// Same value, cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let node = &self.nodes[v.0];
        let (shape, data) = (node.shape.clone(), Rc::clone(&node.data));
        self.nodes.push(Node {
            shape,
            data,
            inputs: Vec::new(),
            func: None,
            requires_grad: false,
            leaf: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss. Gradients add onto whatever earlier
    /// calls left on the leaves until [`Graph::zero_grads`] is called.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::pre(
                "backward",
                format!(
                    "loss must be scalar, got shape {:?}",
                    self.nodes[loss.0].shape
                ),
            ));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.leaf {
                if node.requires_grad {
                    match self.leaf_grads.get_mut(&i) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => {
                            self.leaf_grads.insert(i, g);
                        }
                    }
                }
                continue;
            }
            let Some(func) = &node.func else { continue };
            let inputs: Vec<&[f64]> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].data.as_slice())
                .collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = func.backward(&inputs, &node.data, &g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", func.name());
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(ig), true) = (ig, self.nodes[input.0].requires_grad) else {
                    continue;
                };
                debug_assert_eq!(ig.len(), self.nodes[input.0].data.len(), "{}", func.name());
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }
}
