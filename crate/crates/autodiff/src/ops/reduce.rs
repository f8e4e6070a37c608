use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Op;

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, x: &Tensor<impl Scalar>, axis: usize) -> Result<()> {
    if axis >= x.rank() {
        return Err(TensorError::invalid(
            op,
            format!("axis {axis} out of range for shape {:?}", x.shape()),
        ));
    }
    Ok(())
}

fn removed(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

pub(crate) fn sum_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(T::of(x.sum_f64()))
}

/// Sum over `axis` times `scale` (scale `1/len` gives the mean).
pub(crate) fn sum_axis<T: Scalar>(x: &Tensor<T>, axis: usize, mean: bool) -> Result<(Tensor<T>, T)> {
    check_axis("sum_axis", x, axis)?;
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let scale = if mean { 1.0 / len.max(1) as f64 } else { 1.0 };
    let mut acc = vec![0.0f64; inner];
    let mut out = Vec::with_capacity(outer * inner);
    let d = x.data();
    for o in 0..outer {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for a in 0..len {
            let base = (o * len + a) * inner;
            for (s, v) in acc.iter_mut().zip(&d[base..base + inner]) {
                *s += v.f64();
            }
        }
        out.extend(acc.iter().map(|&s| T::of(s * scale)));
    }
    Ok((Tensor::from_parts(removed(x.shape(), axis), out), T::of(scale)))
}

pub(crate) fn sum_axis_backward<T: Scalar>(input: &[usize], axis: usize, scale: T, g: &[T]) -> Vec<T> {
    let (outer, len, inner) = split_axis(input, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let row = &g[o * inner..(o + 1) * inner];
        for _ in 0..len {
            out.extend(row.iter().map(|&v| v * scale));
        }
    }
    out
}

/// Max over `axis`; the subgradient goes to the first maximizing index.
pub(crate) fn max_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<(Tensor<T>, Op<T>)> {
    check_axis("max_axis", x, axis)?;
    let (outer, len, inner) = split_axis(x.shape(), axis);
    if len == 0 {
        return Err(TensorError::invalid("max_axis", "empty reduction axis"));
    }
    let d = x.data();
    let mut out = Vec::with_capacity(outer * inner);
    let mut arg = vec![0u32; outer * inner];
    for o in 0..outer {
        let start = out.len();
        out.extend_from_slice(&d[o * len * inner..o * len * inner + inner]);
        for a in 1..len {
            let base = (o * len + a) * inner;
            for q in 0..inner {
                let v = d[base + q];
                if v > out[start + q] {
                    out[start + q] = v;
                    arg[start + q] = a as u32;
                }
            }
        }
    }
    let value = Tensor::from_parts(removed(x.shape(), axis), out);
    Ok((
        value,
        Op::MaxAxis {
            input: x.shape().to_vec(),
            axis,
            arg,
        },
    ))
}

pub(crate) fn max_axis_backward<T: Scalar>(input: &[usize], axis: usize, arg: &[u32], g: &[T]) -> Vec<T> {
    let (outer, len, inner) = split_axis(input, axis);
    let mut out = vec![T::zero(); outer * len * inner];
    for o in 0..outer {
        for q in 0..inner {
            let a = arg[o * inner + q] as usize;
            out[(o * len + a) * inner + q] = g[o * inner + q];
        }
    }
    out
}

fn last_width(op: &'static str, x: &Tensor<impl Scalar>) -> Result<usize> {
    match x.shape().last() {
        Some(&w) if w > 0 => Ok(w),
        _ => Err(TensorError::invalid(
            op,
            format!("needs a non-empty last axis, got {:?}", x.shape()),
        )),
    }
}

/// Row-wise softmax over the last axis; `log` selects log-softmax.
pub(crate) fn softmax<T: Scalar>(x: &Tensor<T>, log: bool) -> Result<Tensor<T>> {
    let w = last_width(if log { "log_softmax" } else { "softmax" }, x)?;
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(w) {
        let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let z: f64 = row.iter().map(|v| (v.f64() - m).exp()).sum();
        if log {
            let lz = m + z.ln();
            out.extend(row.iter().map(|v| T::of(v.f64() - lz)));
        } else {
            out.extend(row.iter().map(|v| T::of((v.f64() - m).exp() / z)));
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub(crate) fn softmax_backward<T: Scalar>(out: &Tensor<T>, g: &[T]) -> Vec<T> {
    let w = *out.shape().last().unwrap();
    let mut res = Vec::with_capacity(g.len());
    for (y, gr) in out.data().chunks(w).zip(g.chunks(w)) {
        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a.f64() * b.f64()).sum();
        let dot = T::of(dot);
        res.extend(y.iter().zip(gr).map(|(&y, &g)| y * (g - dot)));
    }
    res
}

pub(crate) fn log_softmax_backward<T: Scalar>(out: &Tensor<T>, g: &[T]) -> Vec<T> {
    let w = *out.shape().last().unwrap();
    let mut res = Vec::with_capacity(g.len());
    for (y, gr) in out.data().chunks(w).zip(g.chunks(w)) {
        let total = T::of(gr.iter().map(|v| v.f64()).sum::<f64>());
        res.extend(y.iter().zip(gr).map(|(&y, &g)| g - y.exp() * total));
    }
    res
}

pub(crate) fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Op<T>)> {
    let w = last_width("layer_norm", x)?;
    if gamma.shape() != [w] {
        return Err(TensorError::shape("layer_norm", x.shape(), gamma.shape()));
    }
    if beta.shape() != [w] {
        return Err(TensorError::shape("layer_norm", x.shape(), beta.shape()));
    }
    let rows = x.numel() / w;
    let mut xhat = Vec::with_capacity(x.numel());
    let mut rstd = Vec::with_capacity(rows);
    let mut out = Vec::with_capacity(x.numel());
    let (gd, bd) = (gamma.data(), beta.data());
    for row in x.data().chunks(w) {
        let mean = row.iter().map(|v| v.f64()).sum::<f64>() / w as f64;
        let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / w as f64;
        let r = 1.0 / (var + eps).sqrt();
        rstd.push(T::of(r));
        for (q, v) in row.iter().enumerate() {
            let h = T::of((v.f64() - mean) * r);
            xhat.push(h);
            out.push(h * gd[q] + bd[q]);
        }
    }
    let value = Tensor::from_parts(x.shape().to_vec(), out);
    Ok((
        value,
        Op::LayerNorm {
            xhat,
            rstd,
            gamma: gamma.clone(),
        },
    ))
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    xhat: &[T],
    rstd: &[T],
    gamma: &Tensor<T>,
    g: &[T],
    needs: &[bool],
) -> Vec<Option<Vec<T>>> {
    let w = gamma.numel();
    let gd = gamma.data();
    let mut gx = needs[0].then(|| Vec::with_capacity(g.len()));
    let mut ggamma = vec![0.0f64; w];
    let mut gbeta = vec![0.0f64; w];
    for ((gr, hr), &r) in g.chunks(w).zip(xhat.chunks(w)).zip(rstd) {
        for q in 0..w {
            ggamma[q] += gr[q].f64() * hr[q].f64();
            gbeta[q] += gr[q].f64();
        }
        if let Some(gx) = gx.as_mut() {
            let mut m1 = 0.0f64;
            let mut m2 = 0.0f64;
            for q in 0..w {
                let dh = gr[q].f64() * gd[q].f64();
                m1 += dh;
                m2 += dh * hr[q].f64();
            }
            m1 /= w as f64;
            m2 /= w as f64;
            let r = r.f64();
            for q in 0..w {
                let dh = gr[q].f64() * gd[q].f64();
                gx.push(T::of(r * (dh - m1 - hr[q].f64() * m2)));
            }
        }
    }
    vec![
        gx,
        needs[1].then(|| ggamma.into_iter().map(T::of).collect()),
        needs[2].then(|| gbeta.into_iter().map(T::of).collect()),
    ]
}

/// Picks one entry per row of the last axis.
pub(crate) fn gather<T: Scalar>(x: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let w = last_width("gather", x)?;
    let rows = x.numel() / w;
    if idx.len() != rows {
        return Err(TensorError::invalid(
            "gather",
            format!("{} indices for {rows} rows of {:?}", idx.len(), x.shape()),
        ));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= w) {
        return Err(TensorError::invalid("gather", format!("index {bad} out of range {w}")));
    }
    let data = idx.iter().enumerate().map(|(r, &i)| x.data()[r * w + i]).collect();
    Ok(Tensor::from_parts(x.shape()[..x.rank() - 1].to_vec(), data))
}

pub(crate) fn gather_backward<T: Scalar>(width: usize, idx: &[usize], g: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); idx.len() * width];
    for (r, &i) in idx.iter().enumerate() {
        out[r * width + i] = g[r];
    }
    out
}
