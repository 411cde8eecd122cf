use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::{Error, Result, Scalar};

/// Handle to a recorded value inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Input values and upstream gradient handed to a backward rule.
pub(crate) struct BackwardArgs<'a, S> {
    pub grad: &'a [S],
    pub inputs: Vec<&'a Tensor<S>>,
    pub output: &'a Tensor<S>,
    /// Whether each input needs a gradient; rules may skip the rest.
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn<S> = Box<dyn Fn(&BackwardArgs<'_, S>) -> Vec<Option<Vec<S>>>>;

struct Node<S> {
    value: Tensor<S>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<S>>,
}

/// Operation record for one forward pass.
///
/// Nodes are appended in execution order, which is a topological order of the
/// dataflow. `backward` may run once per recording.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, usize>,
    backward_done: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push_leaf(t.with_requires_grad(false))
    }

    /// Records a differentiable leaf.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push_leaf(t.with_requires_grad(true))
    }

    /// Brings a stored parameter into the graph. Repeated calls for the same id
    /// return the same handle, so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&ix) = self.params.get(&id) {
            return Var(ix);
        }
        let t = store.get(id);
        let mut value = Tensor::new(t.shape().to_vec(), t.data().to_vec())
            .expect("parameter shape is consistent");
        value.set_requires_grad(true);
        let v = self.push_leaf(value);
        self.params.insert(id, v.0);
        v
    }

    fn push_leaf(&mut self, mut value: Tensor<S>) -> Var {
        value.clear_grad();
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor<S>,
        inputs: &[Var],
        backward: BackwardFn<S>,
    ) -> Var {
        let requires = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad());
        let value = value.with_requires_grad(requires);
        self.nodes.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            backward: requires.then_some(backward),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    /// Reverse-mode sweep from `loss`, which must hold exactly one element.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Autodiff(
                "backward already ran on this graph; record a new forward pass".into(),
            ));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward target must be a single element, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].value.requires_grad() {
            return Ok(());
        }

        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);

        for ix in (0..=loss.0).rev() {
            let Some(g) = grads[ix].take() else { continue };
            let node = &self.nodes[ix];
            if let Some(rule) = &node.backward {
                let inputs: Vec<&Tensor<S>> =
                    node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
                let needs = inputs.iter().map(|t| t.requires_grad()).collect();
                let args = BackwardArgs {
                    grad: &g,
                    inputs,
                    output: &node.value,
                    needs,
                };
                let input_grads = rule(&args);
                debug_assert_eq!(input_grads.len(), node.inputs.len());
                for (&input, ig) in node.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if !self.nodes[input].value.requires_grad() {
                        continue;
                    }
                    match &mut grads[input] {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a += b),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
            grads[ix] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let Some(g) = g {
                if node.value.requires_grad() {
                    node.value.accumulate_grad(&g)?;
                }
            }
        }
        Ok(())
    }

    /// Adds the gradients of every parameter used in this graph into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<S>) -> Result<()> {
        if !self.backward_done {
            return Err(Error::Autodiff("accumulate_param_grads before backward".into()));
        }
        let mut ids: Vec<_> = self.params.iter().collect();
        ids.sort_by_key(|(id, _)| **id);
        for (&id, &ix) in ids {
            let node = &self.nodes[ix].value;
            let g = match node.grad() {
                Some(g) => g.to_vec(),
                None => vec![S::zero(); node.numel()],
            };
            store.get_mut(id).accumulate_grad(&g)?;
        }
        Ok(())
    }

    /// Parameters that entered this graph, in id order.
    pub fn used_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<_> = self.params.keys().copied().collect();
        ids.sort();
        ids
    }
}
