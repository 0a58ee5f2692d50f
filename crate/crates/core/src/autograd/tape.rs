use serde::{Deserialize, Serialize};

use super::ops::{conv, linear, loss, norm, pointwise, pool};
use crate::error::{FcanError, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Leaf,
    Conv3d,
    MaxPool3d,
    Relu,
    Sigmoid,
    MeanVarNormalize,
    ReplicateChannels,
    Mul,
    Add,
    Scale,
    FullyConnected,
    Dropout,
    Reshape,
    SoftmaxCrossEntropy,
    Sum,
}

/// Recorded operation plus whatever its backward rule needs.
pub(crate) enum Op<T> {
    Leaf,
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: conv::ConvGeom,
    },
    MaxPool3d {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    MeanVarNormalize {
        x: Var,
        inv_std: Vec<T>,
    },
    ReplicateChannels {
        x: Var,
        channels: usize,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    FullyConnected {
        x: Var,
        w: Var,
        b: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Reshape {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    Sum {
        x: Var,
    },
}

impl<T> Op<T> {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv3d { .. } => OpKind::Conv3d,
            Op::MaxPool3d { .. } => OpKind::MaxPool3d,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::MeanVarNormalize { .. } => OpKind::MeanVarNormalize,
            Op::ReplicateChannels { .. } => OpKind::ReplicateChannels,
            Op::Mul { .. } => OpKind::Mul,
            Op::Add { .. } => OpKind::Add,
            Op::Scale { .. } => OpKind::Scale,
            Op::FullyConnected { .. } => OpKind::FullyConnected,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::Sum { .. } => OpKind::Sum,
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Append-only record of a forward pass. Nodes are stored in creation order,
/// which is a topological order, so backward is a single reverse sweep.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copies `v` into a fresh leaf that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Hash of which side of every kink the recorded graph took: the sign of
    /// each ReLU input and the winner of each max-pool window. Two evaluations
    /// with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for &v in self.nodes[x.0].value.data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool3d { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to `v`; zeros when
    /// `v` was unreachable or does not track gradients.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        let shape = self.nodes[v.0].value.shape();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::from_vec(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn grad_slice(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Makes the backward rule of every `kind` node scale its upstream
    /// gradient by 1.5. Only useful as a negative control for gradient checks.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`, leaving dLoss/dv for every node
    /// that tracks gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(FcanError::arg(
                "backward",
                format!(
                    "loss must be a scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut gout) = grads[idx].take() else {
                continue;
            };
            if self.fault == Some(node.op.kind()) {
                let k = T::from_f64_lossy(1.5);
                gout.iter_mut().for_each(|g| *g *= k);
            }
            self.backward_node(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, idx: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d { x, w, b, geom } => conv::backward(self, *x, *w, *b, geom, gout, grads),
            Op::MaxPool3d { x, argmax } => pool::backward(self, *x, argmax, gout, grads),
            Op::Relu { x } => pointwise::relu_backward(self, *x, gout, grads),
            Op::Sigmoid { x } => pointwise::sigmoid_backward(self, *x, &node.value, gout, grads),
            Op::MeanVarNormalize { x, inv_std } => {
                norm::backward(self, *x, &node.value, inv_std, gout, grads)
            }
            Op::ReplicateChannels { x, channels } => {
                pointwise::replicate_backward(self, *x, *channels, gout, grads)
            }
            Op::Mul { a, b } => pointwise::mul_backward(self, *a, *b, gout, grads),
            Op::Add { a, b } => pointwise::add_backward(self, *a, *b, gout, grads),
            Op::Scale { x, factor } => pointwise::scale_backward(self, *x, *factor, gout, grads),
            Op::FullyConnected { x, w, b } => linear::backward(self, *x, *w, *b, gout, grads),
            Op::Dropout { x, mask } => pointwise::dropout_backward(self, *x, mask, gout, grads),
            Op::Reshape { x } => pointwise::reshape_backward(self, *x, gout, grads),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => loss::backward(self, *logits, probs, labels, gout, grads),
            Op::Sum { x } => pointwise::sum_backward(self, *x, gout, grads),
        }
    }

    /// Gradient accumulator for `v`, or `None` when `v` needs no gradient.
    pub(crate) fn acc<'g>(&self, v: Var, grads: &'g mut [Option<Vec<T>>]) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[2, 2], 1.0));
        let err = tape.backward(x).unwrap_err();
        assert!(err.to_string().contains("scalar"));
    }

    #[test]
    fn sum_gives_unit_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_fn(&[3, 4], |i| i as f64 - 5.0));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(tape.grad(x).data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn sum_of_squares_gives_twice_input() {
        let mut tape = Tape::<f64>::new();
        let xs = Tensor::from_fn(&[2, 3], |i| 0.3 * i as f64 - 0.7);
        let x = tape.param(xs.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        for (g, v) in tape.grad(x).data().iter().zip(xs.data()) {
            assert!((g - 2.0 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn unreachable_leaf_has_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[2], 3.0));
        let y = tape.param(Tensor::full(&[2], 5.0));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(y).data(), &[0.0, 0.0]);
        assert!(tape.grad_slice(y).is_none());
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[2], 3.0));
        let d = tape.detach(x);
        let p = tape.mul(x, d).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        // d(x * stopgrad(x))/dx = stopgrad(x)
        assert_eq!(tape.grad(x).data(), &[3.0, 3.0]);
    }
}
