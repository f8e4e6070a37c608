use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{aligned_strides, contiguous_strides, for_each_row, Tensor};

/// Concatenation along the last axis.
pub(crate) fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Result<(Tensor<T>, Vec<usize>)> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
    if first.rank() == 0 {
        return Err(TensorError::invalid("concat", "scalar input"));
    }
    let lead = &first.shape()[..first.rank() - 1];
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        if p.rank() != first.rank() || &p.shape()[..p.rank() - 1] != lead {
            return Err(TensorError::shape("concat", first.shape(), p.shape()));
        }
        widths.push(p.shape()[p.rank() - 1]);
    }
    let total: usize = widths.iter().sum();
    let rows: usize = lead.iter().product();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Ok((Tensor::from_parts(shape, out), widths))
}

pub(crate) fn concat_backward<T: Scalar>(
    widths: &[usize],
    g: &[T],
    needs: &[bool],
) -> Vec<Option<Vec<T>>> {
    let total: usize = widths.iter().sum();
    let rows = if total == 0 { 0 } else { g.len() / total };
    let mut grads: Vec<Option<Vec<T>>> = widths
        .iter()
        .zip(needs)
        .map(|(&w, &need)| need.then(|| Vec::with_capacity(rows * w)))
        .collect();
    for r in 0..rows {
        let mut off = r * total;
        for (gr, &w) in grads.iter_mut().zip(widths) {
            if let Some(gr) = gr {
                gr.extend_from_slice(&g[off..off + w]);
            }
            off += w;
        }
    }
    grads
}

pub(crate) fn narrow<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let rank = x.rank();
    if rank == 0 || start + len > x.shape()[rank - 1] {
        return Err(TensorError::invalid(
            "narrow",
            format!("range {start}..{} outside shape {:?}", start + len, x.shape()),
        ));
    }
    let width = x.shape()[rank - 1];
    let rows = x.numel() / width.max(1);
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&x.data()[r * width + start..r * width + start + len]);
    }
    let mut shape = x.shape().to_vec();
    shape[rank - 1] = len;
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn narrow_backward<T: Scalar>(width: usize, start: usize, len: usize, g: &[T]) -> Vec<T> {
    let rows = if len == 0 { 0 } else { g.len() / len };
    let mut out = vec![T::zero(); rows * width];
    for r in 0..rows {
        out[r * width + start..r * width + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
    }
    out
}

fn permute_raw<T: Scalar>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = contiguous_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![T::zero(); data.len()];
    for_each_row(&out_shape, [&strides], |o, [src], [s], inner| {
        for (q, d) in out[o..o + inner].iter_mut().enumerate() {
            *d = data[src + q * s];
        }
    });
    (out, out_shape)
}

pub(crate) fn permute<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let mut seen = vec![false; x.rank()];
    if perm.len() != x.rank() || !perm.iter().all(|&p| p < x.rank() && !std::mem::replace(&mut seen[p], true)) {
        return Err(TensorError::invalid(
            "permute",
            format!("{perm:?} is not a permutation of the axes of {:?}", x.shape()),
        ));
    }
    let (data, shape) = permute_raw(x.data(), x.shape(), perm);
    Ok(Tensor::from_parts(shape, data))
}

pub(crate) fn permute_backward<T: Scalar>(input: &[usize], perm: &[usize], g: &[T]) -> Vec<T> {
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| input[p]).collect();
    permute_raw(g, &out_shape, &inverse).0
}

pub(crate) fn broadcast_to<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let ok = x.rank() <= shape.len()
        && x
            .shape()
            .iter()
            .rev()
            .zip(shape.iter().rev())
            .all(|(&a, &b)| a == b || a == 1);
    if !ok {
        return Err(TensorError::shape("broadcast_to", x.shape(), shape));
    }
    let strides = aligned_strides(x.shape(), shape);
    let numel: usize = shape.iter().product();
    let mut out = vec![T::zero(); numel];
    let src = x.data();
    for_each_row(shape, [&strides], |o, [off], [s], inner| {
        if s == 0 {
            out[o..o + inner].iter_mut().for_each(|d| *d = src[off]);
        } else {
            out[o..o + inner].copy_from_slice(&src[off..off + inner]);
        }
    });
    Ok(Tensor::from_parts(shape.to_vec(), out))
}
