//! Forward kernels and their vector-Jacobian products.
//!
//! Each forward function returns the output value together with the [`Op`]
//! record the tape needs to run the reverse pass. Kernels only see plain
//! [`Tensor`]s; the tape decides whether to keep the record.

pub(crate) mod linalg;
pub(crate) mod reduce;
pub(crate) mod shape;

use crate::scalar::Scalar;
use crate::tensor::{aligned_strides, broadcast_shape, for_each_row, reduce_to, Tensor};
use crate::error::{Result, TensorError};

use linalg::MatMulKind;

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add { a: Vec<usize>, b: Vec<usize>, out: Vec<usize> },
    Sub { a: Vec<usize>, b: Vec<usize>, out: Vec<usize> },
    Mul { a: Tensor<T>, b: Tensor<T>, out: Vec<usize> },
    Scale(T),
    Identity,
    MatMul { a: Tensor<T>, b: Tensor<T>, kind: MatMulKind },
    Affine { pairs: Vec<(Tensor<T>, Tensor<T>)>, rows: usize, n: usize, bias: bool },
    Concat { widths: Vec<usize> },
    Narrow { width: usize, start: usize, len: usize },
    Permute { input: Vec<usize>, perm: Vec<usize> },
    Broadcast { input: Vec<usize>, out: Vec<usize> },
    Relu { out: Tensor<T> },
    Sigmoid { out: Tensor<T> },
    Exp { out: Tensor<T> },
    Log { x: Tensor<T> },
    Softplus { x: Tensor<T> },
    SumAll { numel: usize },
    SumAxis { input: Vec<usize>, axis: usize, scale: T },
    MaxAxis { input: Vec<usize>, axis: usize, arg: Vec<u32> },
    Softmax { out: Tensor<T> },
    LogSoftmax { out: Tensor<T> },
    LayerNorm { xhat: Vec<T>, rstd: Vec<T>, gamma: Tensor<T> },
    Gather { width: usize, idx: Vec<usize> },
    MaxPlus { batch: usize, n: usize, t: usize, arg: Vec<u32> },
}

impl<T: Scalar> Op<T> {
    /// Gradients for each input, `None` where `needs` is false.
    pub(crate) fn backward(&self, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add { a, b, out } => vec![
                needs[0].then(|| reduce_to(g, out, a)),
                needs[1].then(|| reduce_to(g, out, b)),
            ],
            Op::Sub { a, b, out } => vec![
                needs[0].then(|| reduce_to(g, out, a)),
                needs[1].then(|| {
                    let mut r = reduce_to(g, out, b);
                    r.iter_mut().for_each(|v| *v = -*v);
                    r
                }),
            ],
            Op::Mul { a, b, out } => {
                let ga = needs[0].then(|| {
                    let prod = binary(g, out, b, |x, y| x * y);
                    reduce_to(&prod, out, a.shape())
                });
                let gb = needs[1].then(|| {
                    let prod = binary(g, out, a, |x, y| x * y);
                    reduce_to(&prod, out, b.shape())
                });
                vec![ga, gb]
            }
            Op::Scale(c) => vec![Some(g.iter().map(|&v| v * *c).collect())],
            Op::Identity => vec![Some(g.to_vec())],
            Op::MatMul { a, b, kind } => linalg::matmul_backward(a, b, *kind, g, needs),
            Op::Affine { pairs, rows, n, bias } => linalg::affine_backward(pairs, *rows, *n, *bias, g, needs),
            Op::Concat { widths } => shape::concat_backward(widths, g, needs),
            Op::Narrow { width, start, len } => {
                vec![Some(shape::narrow_backward(*width, *start, *len, g))]
            }
            Op::Permute { input, perm } => vec![Some(shape::permute_backward(input, perm, g))],
            Op::Broadcast { input, out } => vec![Some(reduce_to(g, out, input))],
            Op::Relu { out } => vec![Some(
                g.iter()
                    .zip(out.data())
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect(),
            )],
            Op::Sigmoid { out } => vec![Some(
                g.iter()
                    .zip(out.data())
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect(),
            )],
            Op::Exp { out } => vec![Some(g.iter().zip(out.data()).map(|(&g, &y)| g * y).collect())],
            Op::Log { x } => vec![Some(g.iter().zip(x.data()).map(|(&g, &x)| g / x).collect())],
            Op::Softplus { x } => vec![Some(
                g.iter()
                    .zip(x.data())
                    .map(|(&g, &x)| g * sigmoid(x))
                    .collect(),
            )],
            Op::SumAll { numel } => vec![Some(vec![g[0]; *numel])],
            Op::SumAxis { input, axis, scale } => {
                vec![Some(reduce::sum_axis_backward(input, *axis, *scale, g))]
            }
            Op::MaxAxis { input, axis, arg } => {
                vec![Some(reduce::max_axis_backward(input, *axis, arg, g))]
            }
            Op::Softmax { out } => vec![Some(reduce::softmax_backward(out, g))],
            Op::LogSoftmax { out } => vec![Some(reduce::log_softmax_backward(out, g))],
            Op::LayerNorm { xhat, rstd, gamma } => reduce::layer_norm_backward(xhat, rstd, gamma, g, needs),
            Op::Gather { width, idx } => vec![Some(reduce::gather_backward(*width, idx, g))],
            Op::MaxPlus { batch, n, t, arg } => linalg::maxplus_backward(*batch, *n, *t, arg, g, needs),
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Broadcasting binary kernel: `lhs` is laid out as `out`, `rhs` is
/// broadcast against it.
fn binary<T: Scalar>(lhs: &[T], out: &[usize], rhs: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    let full = aligned_strides(out, out);
    let rs = aligned_strides(rhs.shape(), out);
    let mut res = vec![T::zero(); lhs.len()];
    let rd = rhs.data();
    for_each_row(out, [&full, &rs], |o, [la, ra], [_, sr], inner| {
        let dst = &mut res[o..o + inner];
        if sr == 0 {
            let r = rd[ra];
            for (d, &l) in dst.iter_mut().zip(&lhs[la..la + inner]) {
                *d = f(l, r);
            }
        } else {
            for ((d, &l), &r) in dst.iter_mut().zip(&lhs[la..la + inner]).zip(&rd[ra..ra + inner]) {
                *d = f(l, r);
            }
        }
    });
    res
}

pub(crate) fn broadcast_binary<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let out = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| TensorError::shape(op, a.shape(), b.shape()))?;
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok((Tensor::from_parts(out.clone(), data), out));
    }
    let sa = aligned_strides(a.shape(), &out);
    let sb = aligned_strides(b.shape(), &out);
    let numel: usize = out.iter().product();
    let mut res = vec![T::zero(); numel];
    let (ad, bd) = (a.data(), b.data());
    for_each_row(&out, [&sa, &sb], |o, [oa, ob], [ia, ib], inner| {
        let dst = &mut res[o..o + inner];
        match (ia, ib) {
            (1, 1) => {
                for ((d, &x), &y) in dst.iter_mut().zip(&ad[oa..oa + inner]).zip(&bd[ob..ob + inner]) {
                    *d = f(x, y);
                }
            }
            (1, 0) => {
                let y = bd[ob];
                for (d, &x) in dst.iter_mut().zip(&ad[oa..oa + inner]) {
                    *d = f(x, y);
                }
            }
            (0, 1) => {
                let x = ad[oa];
                for (d, &y) in dst.iter_mut().zip(&bd[ob..ob + inner]) {
                    *d = f(x, y);
                }
            }
            _ => {
                let v = f(ad[oa], bd[ob]);
                dst.iter_mut().for_each(|d| *d = v);
            }
        }
    });
    Ok((Tensor::from_parts(out.clone(), res), out))
}

pub(crate) fn unary<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
