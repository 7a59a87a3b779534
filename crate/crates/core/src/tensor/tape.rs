//! Reverse-mode tape.
//!
//! Values live in an arena owned by the [`Tape`]; a [`Var`] is an index into
//! it. Because a node can only reference nodes recorded before it, the arena
//! order is already a topological order, and [`Tape::backward`] is a single
//! reverse sweep.

use super::{Shape, Tensor};
use crate::{Error, Exec, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a backward rule may look at.
pub struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    /// Gradient of the loss with respect to `output`.
    pub grad: &'a [f64],
    /// Whether each input needs a gradient; rules may skip the others.
    pub needs: Vec<bool>,
    pub exec: Exec,
}

/// Backward rule of a recorded operation.
///
/// Returns one entry per input, in input order. `None` means "no contribution".
pub trait Backward: Send + Sync {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward>>,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    exec: Exec,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_exec(Exec::default())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Self { nodes: Vec::new(), exec }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf. It receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(Node { value: t, inputs: Vec::new(), rule: None, needs_grad })
    }

    /// Record a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    /// Record the result of an operation over `inputs`.
    pub fn record(&mut self, inputs: &[Var], value: Tensor, rule: impl Backward + 'static) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let rule: Option<Box<dyn Backward>> = if needs_grad { Some(Box::new(rule)) } else { None };
        self.push(Node { value, inputs: inputs.to_vec(), rule, needs_grad })
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Gradient assigned by the last [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Move a value (with its gradient) out of the tape, leaving an empty tensor.
    pub fn take(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(Shape::new(0, 0, 0, 0)))
    }

    /// Propagate d(loss)/d(node) to every node that needs a gradient.
    ///
    /// Gradients from an earlier call are discarded. Leaves marked
    /// `requires_grad` that do not influence the loss receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != Shape::SCALAR {
            return Err(Error::NotScalar(shape));
        }
        for node in &mut self.nodes {
            *node.value.grad_mut() = None;
        }
        if !self.nodes[loss.0].needs_grad {
            self.fill_leaf_zeros();
            return Ok(());
        }
        *self.nodes[loss.0].value.grad_mut() = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let (Some(rule), Some(grad)) = (node.rule.as_ref(), node.value.grad()) else {
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                output: &node.value,
                grad,
                needs: node.inputs.iter().map(|v| self.nodes[v.0].needs_grad).collect(),
                exec: self.exec,
            };
            let contributions = rule.backward(&ctx);
            debug_assert_eq!(contributions.len(), node.inputs.len());
            let inputs = node.inputs.clone();
            for (var, contrib) in inputs.into_iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                let target = &mut self.nodes[var.0];
                if !target.needs_grad {
                    continue;
                }
                debug_assert_eq!(contrib.len(), target.value.numel());
                match target.value.grad_mut() {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        self.fill_leaf_zeros();
        Ok(())
    }

    fn fill_leaf_zeros(&mut self) {
        for node in &mut self.nodes {
            if node.inputs.is_empty() && node.needs_grad && node.value.grad().is_none() {
                let n = node.value.numel();
                *node.value.grad_mut() = Some(vec![0.0; n]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)).with_requires_grad(true));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(Shape::new(2, 3, 2, 2), |n, c, h, w| (n + c + h + w) as f64).with_requires_grad(true));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), vec![1.0; 24].as_slice());
    }

    #[test]
    fn square_gives_two_x() {
        let mut tape = Tape::new();
        let t = Tensor::from_fn(Shape::new(1, 2, 2, 2), |_, c, h, w| c as f64 - h as f64 * 0.5 + w as f64 * 1.25);
        let x = tape.leaf(t.clone().with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        let expected: Vec<f64> = t.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.grad(x).unwrap(), expected.as_slice());
    }

    #[test]
    fn fan_out_accumulates_exactly() {
        let t = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, h, w| (h * 3 + w) as f64 * 0.3 - 1.0);
        let single = {
            let mut tape = Tape::new();
            let x = tape.leaf(t.clone().with_requires_grad(true));
            let y = tape.scale(x, 3.0);
            let s = tape.sum(y);
            tape.backward(s).unwrap();
            tape.grad(x).unwrap().to_vec()
        };
        let mut tape = Tape::new();
        let x = tape.leaf(t.with_requires_grad(true));
        let a = tape.scale(x, 3.0);
        let b = tape.scale(x, 3.0);
        let y = tape.add(a, b).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let doubled: Vec<f64> = single.iter().map(|g| g + g).collect();
        assert_eq!(tape.grad(x).unwrap(), doubled.as_slice());
    }

    #[test]
    fn unused_leaf_gets_zeros_and_constants_get_nothing() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(Shape::new(1, 1, 1, 2), 2.0).with_requires_grad(true));
        let unused = tape.leaf(Tensor::full(Shape::new(1, 1, 1, 3), 1.0).with_requires_grad(true));
        let k = tape.constant(Tensor::full(Shape::new(1, 1, 1, 2), 5.0));
        let y = tape.mul(x, k).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[5.0, 5.0]);
        assert_eq!(tape.grad(unused).unwrap(), &[0.0, 0.0, 0.0]);
        assert!(tape.grad(k).is_none());
    }
}
