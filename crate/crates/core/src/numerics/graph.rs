//! Reverse-mode tape.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use super::ops;
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Conv2d { x: Var, k: Var, b: Var, stride: usize, padding: usize },
    TransposeConv2d { x: Var, k: Var, b: Var, stride: usize, padding: usize },
    Dense { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Reshape(Var),
    Mse(Var, Var),
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op,
    trainable: bool,
    requires_grad: bool,
}

/// Records a forward computation so [`Graph::backward`] can differentiate it.
///
/// Leaves are either parameters (gradients reported) or frozen inputs
/// (never differentiated). Parameters are borrowed, not copied.
pub struct Graph<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Cow<'a, Tensor<T>>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            trainable,
            requires_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.leaf(Cow::Borrowed(t), true)
    }

    pub fn input(&mut self, t: &'a Tensor<T>) -> Var {
        self.leaf(Cow::Borrowed(t), false)
    }

    pub fn input_owned(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Cow::Owned(t), false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(k), self.value(b), stride, padding)?;
        Ok(self.push(Cow::Owned(y), Op::Conv2d { x, k, b, stride, padding }, &[x, k, b]))
    }

    pub fn transpose_conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = ops::transpose_conv2d(self.value(x), self.value(k), self.value(b), stride, padding)?;
        Ok(self.push(
            Cow::Owned(y),
            Op::TransposeConv2d { x, k, b, stride, padding },
            &[x, k, b],
        ))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Cow::Owned(y), Op::Dense { x, w, b }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(Cow::Owned(y), Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(Cow::Owned(y), Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(Cow::Owned(y), Op::Add(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.push(Cow::Owned(y), Op::Reshape(x), &[x]))
    }

    /// Scalar node holding `mse(a, b)`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let loss = ops::mse(self.value(a), self.value(b))?;
        let y = Tensor::from_parts(vec![1], vec![T::lit(loss)]);
        Ok(self.push(Cow::Owned(y), Op::Mse(a, b), &[a, b]))
    }

    /// Gradient of the scalar `root` with respect to every parameter leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_node = self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::Contract("backward: unknown root".into()))?;
        if root_node.value.len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward requires a scalar root, got shape {:?}",
                root_node.value.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Tensor::from_parts(root_node.value.shape().to_vec(), vec![T::one()]));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            if let Op::Leaf = node.op {
                adj[idx] = Some(g);
                continue;
            }
            for (var, grad) in self.local_grads(node, &g)? {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                accumulate(&mut adj[var.0], grad);
            }
        }

        let grads = self
            .nodes
            .iter()
            .zip(adj)
            .map(|(n, g)| if n.trainable { g } else { None })
            .collect();
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node<'a, T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        Ok(match node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, k, b, stride, padding } => {
                let cg = ops::conv2d_backward(self.value(x), self.value(k), stride, padding, g, needs(x))?;
                let mut out = vec![(k, cg.kernel), (b, cg.bias)];
                out.extend(cg.input.map(|d| (x, d)));
                out
            }
            Op::TransposeConv2d { x, k, b, stride, padding } => {
                let cg = ops::transpose_conv2d_backward(
                    self.value(x),
                    self.value(k),
                    stride,
                    padding,
                    g,
                    needs(x),
                )?;
                let mut out = vec![(k, cg.kernel), (b, cg.bias)];
                out.extend(cg.input.map(|d| (x, d)));
                out
            }
            Op::Dense { x, w, b } => {
                let (dx, dw, db) = ops::dense_backward(self.value(x), self.value(w), g)?;
                vec![(x, dx), (w, dw), (b, db)]
            }
            Op::Relu(x) => vec![(x, ops::relu_backward(self.value(x), g))],
            Op::Sigmoid(x) => vec![(x, ops::sigmoid_backward(&node.value, g))],
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Reshape(x) => vec![(x, g.reshape(self.value(x).shape())?)],
            Op::Mse(a, b) => {
                let seed = g.data()[0];
                let da = ops::mse_backward(self.value(a), self.value(b), seed)?;
                let db = da.map(|v| -v);
                vec![(a, da), (b, db)]
            }
        })
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, grad: Tensor<T>) {
    match slot {
        None => *slot = Some(grad),
        Some(existing) => {
            let shape = existing.shape().to_vec();
            let mut data = core::mem::replace(existing, Tensor::zeros([1])).into_data();
            data.iter_mut().zip(grad.data()).for_each(|(a, &b)| *a += b);
            *existing = Tensor::from_parts(shape, data);
        }
    }
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    /// `None` for frozen inputs and intermediate values.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
