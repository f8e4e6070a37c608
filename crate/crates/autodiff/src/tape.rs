//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation whose inputs require gradients, in
//! execution order. [`Tape::backward`] walks that record in exact reverse,
//! summing contributions into each consumed value, and returns the gradients
//! of every leaf created with [`Tape::param`].
//!
//! ```
//! use nar_autodiff::{Tape, Tensor};
//!
//! let tape = Tape::<f32>::new();
//! let x = tape.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
//! let loss = x.mul(&x).unwrap().sum();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.wrt(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::ops::{self, linalg, reduce, shape, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct Node<T: Scalar> {
    op: Op<T>,
    inputs: Vec<Option<usize>>,
    shape: Vec<usize>,
}

pub struct Tape<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
    checked: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// A recording tape.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            checked: false,
        }
    }

    /// A tape that records nothing; intermediates are freed as soon as the
    /// last [`Var`] referencing them is dropped.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: false,
            checked: false,
        }
    }

    /// Fail any op whose output contains NaN or infinity.
    pub fn checked(mut self) -> Self {
        self.checked = true;
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var {
            tape: self,
            id: None,
            value,
        }
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        if !self.recording {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape: value.shape().to_vec(),
        });
        Var {
            tape: self,
            id: Some(nodes.len() - 1),
            value,
        }
    }

    fn record<'t>(
        &'t self,
        name: &'static str,
        inputs: &[Option<usize>],
        value: Tensor<T>,
        op: impl FnOnce() -> Op<T>,
    ) -> Result<Var<'t, T>> {
        if self.checked && !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        if !self.recording || inputs.iter().all(Option::is_none) {
            return Ok(self.constant(value));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: op(),
            inputs: inputs.to_vec(),
            shape: value.shape().to_vec(),
        });
        Ok(Var {
            tape: self,
            id: Some(nodes.len() - 1),
            value,
        })
    }

    /// Reverse pass from a single-element `loss`.
    ///
    /// Consumes the record: saved intermediates are released node by node
    /// and the tape is empty afterwards.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(TensorError::invalid(
                "backward",
                format!("loss must hold one value, got shape {:?}", loss.value.shape()),
            ));
        }
        let mut nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let mut leaves = HashMap::new();
        let Some(root) = loss.id else {
            return Ok(Gradients { leaves });
        };
        nodes.truncate(root + 1);
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);
        while let Some(node) = nodes.pop() {
            let id = nodes.len();
            let Some(g) = grads[id].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                leaves.insert(id, Tensor::from_parts(node.shape, g));
                continue;
            }
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = node.op.backward(&g, &needs);
            drop(node.op);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(pid), Some(ig)) = (input, ig) else {
                    continue;
                };
                match &mut grads[*pid] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                    slot => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T: Scalar = f32> {
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf, `None` if the loss does not depend
    /// on it.
    pub fn wrt(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        var.id.and_then(|id| self.leaves.get(&id))
    }

    /// Like [`Gradients::wrt`] but zeros when the loss ignores the leaf.
    pub fn wrt_or_zeros(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.wrt(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}

/// A value on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t, T: Scalar = f32> {
    tape: &'t Tape<T>,
    id: Option<usize>,
    value: Tensor<T>,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .finish()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        self.tape.constant(self.value.clone())
    }

    fn unary(
        &self,
        name: &'static str,
        value: Tensor<T>,
        op: impl FnOnce() -> Op<T>,
    ) -> Result<Self> {
        self.tape.record(name, &[self.id], value, op)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let (value, out) = ops::broadcast_binary("add", &self.value, &other.value, |a, b| a + b)?;
        let (a, b) = (self.shape().to_vec(), other.shape().to_vec());
        self.tape.record("add", &[self.id, other.id], value, || Op::Add { a, b, out })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let (value, out) = ops::broadcast_binary("sub", &self.value, &other.value, |a, b| a - b)?;
        let (a, b) = (self.shape().to_vec(), other.shape().to_vec());
        self.tape.record("sub", &[self.id, other.id], value, || Op::Sub { a, b, out })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        let (value, out) = ops::broadcast_binary("mul", &self.value, &other.value, |a, b| a * b)?;
        self.tape.record("mul", &[self.id, other.id], value, || Op::Mul {
            a: self.value.clone(),
            b: other.value.clone(),
            out,
        })
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        let c = T::of(c);
        self.unary("scale", ops::unary(&self.value, |v| v * c), || Op::Scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Self> {
        let c = T::of(c);
        self.unary("add_scalar", ops::unary(&self.value, |v| v + c), || Op::Identity)
    }

    pub fn neg(&self) -> Result<Self> {
        self.scale(-1.0)
    }

    /// `[.., k] x [k, n]` against a shared matrix, or `[B, m, k] x [B, k, n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.matmul_impl(other, false)
    }

    /// Product with the transpose of the last two axes of `other`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: &Self, trans_b: bool) -> Result<Self> {
        let (value, kind) = linalg::matmul(&self.value, &other.value, trans_b)?;
        self.tape.record("matmul", &[self.id, other.id], value, || Op::MatMul {
            a: self.value.clone(),
            b: other.value.clone(),
            kind,
        })
    }

    /// `x W + b` in one pass, with `W` of shape `[k, n]` and `b` of shape `[n]`.
    pub fn linear(&self, w: &Self, b: Option<&Self>) -> Result<Self> {
        Var::affine(&[(self, w)], b)
    }

    /// `sum_i x_i W_i + b`, the product of a concatenation `[x_0, x_1, ..]`
    /// with stacked weights, without forming the concatenation.
    pub fn affine(pairs: &[(&Self, &Self)], b: Option<&Self>) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| TensorError::invalid("affine", "no inputs"))?;
        let values: Vec<(&Tensor<T>, &Tensor<T>)> = pairs.iter().map(|(x, w)| (&x.value, &w.value)).collect();
        let (value, op) = linalg::affine(&values, b.map(|b| &b.value))?;
        let mut ids: Vec<Option<usize>> = pairs.iter().flat_map(|(x, w)| [x.id, w.id]).collect();
        if let Some(b) = b {
            ids.push(b.id);
        }
        first.0.tape.record("affine", &ids, value, || op)
    }

    /// Concatenation along the last axis.
    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| &p.value).collect();
        let (value, widths) = shape::concat(&values)?;
        let ids: Vec<Option<usize>> = parts.iter().map(|p| p.id).collect();
        first.tape.record("concat", &ids, value, || Op::Concat { widths })
    }

    /// Slice `start..start+len` of the last axis.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Self> {
        let value = shape::narrow(&self.value, start, len)?;
        let width = *self.shape().last().unwrap_or(&0);
        self.unary("narrow", value, || Op::Narrow { width, start, len })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let value = self.value.reshape(shape)?;
        self.unary("reshape", value, || Op::Identity)
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let value = shape::permute(&self.value, perm)?;
        let input = self.shape().to_vec();
        self.unary("permute", value, || Op::Permute {
            input,
            perm: perm.to_vec(),
        })
    }

    pub fn swap_axes(&self, a: usize, b: usize) -> Result<Self> {
        let mut perm: Vec<usize> = (0..self.value.rank()).collect();
        if a >= perm.len() || b >= perm.len() {
            return Err(TensorError::invalid("swap_axes", format!("axes {a},{b} for {:?}", self.shape())));
        }
        perm.swap(a, b);
        self.permute(&perm)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        let value = shape::broadcast_to(&self.value, shape)?;
        let input = self.shape().to_vec();
        self.unary("broadcast_to", value, || Op::Broadcast {
            input,
            out: shape.to_vec(),
        })
    }

    pub fn relu(&self) -> Result<Self> {
        let value = ops::unary(&self.value, |v| v.max(T::zero()));
        self.unary("relu", value.clone(), || Op::Relu { out: value })
    }

    pub fn sigmoid(&self) -> Result<Self> {
        let value = ops::unary(&self.value, ops::sigmoid);
        self.unary("sigmoid", value.clone(), || Op::Sigmoid { out: value })
    }

    pub fn exp(&self) -> Result<Self> {
        let value = ops::unary(&self.value, T::exp);
        self.unary("exp", value.clone(), || Op::Exp { out: value })
    }

    pub fn log(&self) -> Result<Self> {
        let value = ops::unary(&self.value, T::ln);
        self.unary("log", value, || Op::Log { x: self.value.clone() })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Result<Self> {
        let value = ops::unary(&self.value, ops::softplus);
        self.unary("softplus", value, || Op::Softplus { x: self.value.clone() })
    }

    pub fn sum(&self) -> Self {
        let value = reduce::sum_all(&self.value);
        let numel = self.value.numel();
        self.unary("sum", value, || Op::SumAll { numel })
            .expect("sum of finite values")
    }

    pub fn mean(&self) -> Self {
        let n = self.value.numel().max(1) as f64;
        self.sum().scale(1.0 / n).expect("scaling a scalar")
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        self.sum_axis_impl(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Self> {
        self.sum_axis_impl(axis, true)
    }

    fn sum_axis_impl(&self, axis: usize, mean: bool) -> Result<Self> {
        let (value, scale) = reduce::sum_axis(&self.value, axis, mean)?;
        let input = self.shape().to_vec();
        self.unary("sum_axis", value, || Op::SumAxis { input, axis, scale })
    }

    /// Max over `axis`; ties route the gradient to the first maximum.
    pub fn max_axis(&self, axis: usize) -> Result<Self> {
        let (value, op) = reduce::max_axis(&self.value, axis)?;
        self.unary("max_axis", value, || op)
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Self> {
        let value = reduce::softmax(&self.value, false)?;
        self.unary("softmax", value.clone(), || Op::Softmax { out: value })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Self> {
        let value = reduce::softmax(&self.value, true)?;
        self.unary("log_softmax", value.clone(), || Op::LogSoftmax { out: value })
    }

    /// Normalization over the last axis followed by `gamma * x + beta`.
    pub fn layer_norm(&self, gamma: &Self, beta: &Self, eps: f64) -> Result<Self> {
        let (value, op) = reduce::layer_norm(&self.value, &gamma.value, &beta.value, eps)?;
        self.tape
            .record("layer_norm", &[self.id, gamma.id, beta.id], value, || op)
    }

    /// One entry per row of the last axis.
    pub fn gather(&self, idx: &[usize]) -> Result<Self> {
        let value = reduce::gather(&self.value, idx)?;
        let width = *self.shape().last().unwrap_or(&0);
        self.unary("gather", value, || Op::Gather {
            width,
            idx: idx.to_vec(),
        })
    }

    /// `out[b,i,j,:] = max_k self[b,k,:] + eik[b,i,k,:] + ekj[b,k,j,:]`
    /// for `self` of shape `[B, n, t]` and edge operands `[B, n, n, t]`.
    pub fn maxplus_triplet(&self, eik: &Self, ekj: &Self) -> Result<Self> {
        let (value, op) = linalg::maxplus_triplet(&self.value, &eik.value, &ekj.value)?;
        self.tape
            .record("maxplus_triplet", &[self.id, eik.id, ekj.id], value, || op)
    }
}
