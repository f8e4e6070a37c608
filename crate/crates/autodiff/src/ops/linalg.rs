use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Op;

/// Layout of a matrix product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum MatMulKind {
    /// `[.., k] x [k, n]`, or `[.., k] x [n, k]^T` when `trans_b`.
    Shared { rows: usize, k: usize, n: usize, trans_b: bool },
    /// `[B, m, k] x [B, k, n]`, or `[B, m, k] x [B, n, k]^T` when `trans_b`.
    Batched { batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
}

/// `c = beta*c + op(a) * op(b)` with `op(a)` of shape `m×k` and `op(b)` of
/// shape `k×n`. A transposed operand is stored as its transpose, row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices hold exactly the extents described by the strides and
    // `c` is a distinct mutable borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn matmul<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    trans_b: bool,
) -> Result<(Tensor<T>, MatMulKind)> {
    let op = if trans_b { "matmul_t" } else { "matmul" };
    let (sa, sb) = (a.shape(), b.shape());
    let err = || TensorError::shape(op, sa, sb);
    if sa.is_empty() || sb.len() < 2 {
        return Err(err());
    }
    let k = sa[sa.len() - 1];
    if sb.len() == 2 {
        let (bk, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if bk != k {
            return Err(err());
        }
        let rows = a.numel() / k.max(1);
        let mut out = vec![T::zero(); rows * n];
        if k > 0 {
            gemm(rows, k, n, a.data(), false, b.data(), trans_b, T::zero(), &mut out);
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let kind = MatMulKind::Shared { rows, k, n, trans_b };
        return Ok((Tensor::from_parts(shape, out), kind));
    }
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
        return Err(err());
    }
    let (batch, m) = (sa[0], sa[1]);
    let (bk, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
    if bk != k {
        return Err(err());
    }
    let mut out = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        gemm(
            m,
            k,
            n,
            &a.data()[bi * m * k..(bi + 1) * m * k],
            false,
            &b.data()[bi * k * n..(bi + 1) * k * n],
            trans_b,
            T::zero(),
            &mut out[bi * m * n..(bi + 1) * m * n],
        );
    }
    let kind = MatMulKind::Batched { batch, m, k, n, trans_b };
    Ok((Tensor::from_parts(vec![batch, m, n], out), kind))
}

pub(crate) fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    kind: MatMulKind,
    g: &[T],
    needs: &[bool],
) -> Vec<Option<Vec<T>>> {
    let (batch, m, k, n, trans_b, shared) = match kind {
        MatMulKind::Shared { rows, k, n, trans_b } => (1, rows, k, n, trans_b, true),
        MatMulKind::Batched { batch, m, k, n, trans_b } => (batch, m, k, n, trans_b, false),
    };
    let mut ga = needs[0].then(|| vec![T::zero(); a.numel()]);
    let mut gb = needs[1].then(|| vec![T::zero(); b.numel()]);
    for bi in 0..batch {
        let gs = &g[bi * m * n..(bi + 1) * m * n];
        let asl = &a.data()[bi * m * k..(bi + 1) * m * k];
        let boff = if shared { 0 } else { bi * k * n };
        let bsl = &b.data()[boff..boff + k * n];
        if let Some(ga) = ga.as_mut() {
            let dst = &mut ga[bi * m * k..(bi + 1) * m * k];
            // dA = dC * op(B)^T
            gemm(m, n, k, gs, false, bsl, !trans_b, T::zero(), dst);
        }
        if let Some(gb) = gb.as_mut() {
            let dst = &mut gb[boff..boff + k * n];
            let beta = if shared && bi > 0 { T::one() } else { T::zero() };
            if trans_b {
                // dB (n×k) = dC^T * A
                gemm(n, m, k, gs, true, asl, false, beta, dst);
            } else {
                // dB (k×n) = A^T * dC
                gemm(k, m, n, asl, true, gs, false, beta, dst);
            }
        }
    }
    vec![ga, gb]
}

/// `sum_i x_i W_i + b` with every `x_i` of shape `[.., k_i]` sharing the
/// leading axes and every `W_i` of shape `[k_i, n]`. One output buffer
/// accumulates all products.
pub(crate) fn affine<T: Scalar>(
    pairs: &[(&Tensor<T>, &Tensor<T>)],
    bias: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Op<T>)> {
    let (x0, w0) = pairs
        .first()
        .ok_or_else(|| TensorError::invalid("affine", "no inputs"))?;
    let lead = &x0.shape()[..x0.rank().saturating_sub(1)];
    if x0.rank() == 0 || w0.rank() != 2 {
        return Err(TensorError::shape("affine", x0.shape(), w0.shape()));
    }
    let n = w0.shape()[1];
    let rows: usize = lead.iter().product();
    let mut out = vec![T::zero(); rows * n];
    if let Some(b) = bias {
        if b.shape() != [n] {
            return Err(TensorError::shape("affine", w0.shape(), b.shape()));
        }
        for r in out.chunks_mut(n.max(1)) {
            r.copy_from_slice(b.data());
        }
    }
    let mut ks = Vec::with_capacity(pairs.len());
    for (x, w) in pairs {
        let k = *x.shape().last().unwrap_or(&0);
        if x.rank() == 0 || &x.shape()[..x.rank() - 1] != lead || w.shape() != [k, n] {
            return Err(TensorError::shape("affine", x.shape(), w.shape()));
        }
        if k > 0 {
            gemm(rows, k, n, x.data(), false, w.data(), false, T::one(), &mut out);
        }
        ks.push(k);
    }
    let mut shape = lead.to_vec();
    shape.push(n);
    let saved = pairs.iter().map(|(x, w)| ((*x).clone(), (*w).clone())).collect();
    Ok((
        Tensor::from_parts(shape, out),
        Op::Affine { pairs: saved, rows, n, bias: bias.is_some() },
    ))
}

/// Gradients in input order `x_0, W_0, x_1, W_1, .., b`.
pub(crate) fn affine_backward<T: Scalar>(
    pairs: &[(Tensor<T>, Tensor<T>)],
    rows: usize,
    n: usize,
    bias: bool,
    g: &[T],
    needs: &[bool],
) -> Vec<Option<Vec<T>>> {
    let mut out = Vec::with_capacity(2 * pairs.len() + 1);
    for (i, (x, w)) in pairs.iter().enumerate() {
        let k = w.shape()[0];
        out.push(needs[2 * i].then(|| {
            let mut gx = vec![T::zero(); rows * k];
            gemm(rows, n, k, g, false, w.data(), true, T::zero(), &mut gx);
            gx
        }));
        out.push(needs[2 * i + 1].then(|| {
            let mut gw = vec![T::zero(); k * n];
            gemm(k, rows, n, x.data(), true, g, false, T::zero(), &mut gw);
            gw
        }));
    }
    if bias {
        out.push(needs[2 * pairs.len()].then(|| {
            let mut acc = vec![0f64; n];
            for r in g.chunks(n.max(1)) {
                for (a, &v) in acc.iter_mut().zip(r) {
                    *a += v.f64();
                }
            }
            acc.into_iter().map(T::of).collect()
        }));
    }
    out
}

/// `out[b,i,j,c] = max_k tk[b,k,c] + eik[b,i,k,c] + ekj[b,k,j,c]`.
///
/// The triplet reduction of the processor, fused so the `n^3` intermediate
/// is never materialized. Ties resolve to the smallest `k`.
pub(crate) fn maxplus_triplet<T: Scalar>(
    tk: &Tensor<T>,
    eik: &Tensor<T>,
    ekj: &Tensor<T>,
) -> Result<(Tensor<T>, Op<T>)> {
    let s = tk.shape();
    if s.len() != 3 {
        return Err(TensorError::shape("maxplus_triplet", s, eik.shape()));
    }
    let (batch, n, t) = (s[0], s[1], s[2]);
    let edge = [batch, n, n, t];
    if eik.shape() != edge {
        return Err(TensorError::shape("maxplus_triplet", s, eik.shape()));
    }
    if ekj.shape() != edge {
        return Err(TensorError::shape("maxplus_triplet", s, ekj.shape()));
    }
    let (tkd, ed, kd) = (tk.data(), eik.data(), ekj.data());
    let mut out = vec![T::neg_infinity(); batch * n * n * t];
    let mut arg = vec![0u32; batch * n * n * t];
    let mut row = vec![T::zero(); t];
    for b in 0..batch {
        for i in 0..n {
            for k in 0..n {
                // a_ik = tk_k + e_ik is shared by every j
                let tko = (b * n + k) * t;
                let eo = ((b * n + i) * n + k) * t;
                for c in 0..t {
                    row[c] = tkd[tko + c] + ed[eo + c];
                }
                for j in 0..n {
                    let ko = ((b * n + k) * n + j) * t;
                    let oo = ((b * n + i) * n + j) * t;
                    for c in 0..t {
                        let v = row[c] + kd[ko + c];
                        if v > out[oo + c] || k == 0 {
                            out[oo + c] = v;
                            arg[oo + c] = k as u32;
                        }
                    }
                }
            }
        }
    }
    let value = Tensor::from_parts(edge.to_vec(), out);
    Ok((value, Op::MaxPlus { batch, n, t, arg }))
}

pub(crate) fn maxplus_backward<T: Scalar>(
    batch: usize,
    n: usize,
    t: usize,
    arg: &[u32],
    g: &[T],
    needs: &[bool],
) -> Vec<Option<Vec<T>>> {
    let mut gtk = needs[0].then(|| vec![T::zero(); batch * n * t]);
    let mut geik = needs[1].then(|| vec![T::zero(); batch * n * n * t]);
    let mut gekj = needs[2].then(|| vec![T::zero(); batch * n * n * t]);
    for b in 0..batch {
        for i in 0..n {
            for j in 0..n {
                let oo = ((b * n + i) * n + j) * t;
                for c in 0..t {
                    let k = arg[oo + c] as usize;
                    let gv = g[oo + c];
                    if let Some(v) = gtk.as_mut() {
                        v[(b * n + k) * t + c] += gv;
                    }
                    if let Some(v) = geik.as_mut() {
                        v[((b * n + i) * n + k) * t + c] += gv;
                    }
                    if let Some(v) = gekj.as_mut() {
                        v[((b * n + k) * n + j) * t + c] += gv;
                    }
                }
            }
        }
    }
    vec![gtk, geik, gekj]
}
