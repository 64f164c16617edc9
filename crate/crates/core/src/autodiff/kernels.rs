//! Raw numeric kernels behind the tape ops.

use crate::scalar::Scalar;

use super::MatMulSpec;

#[inline]
pub(super) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `-t ln σ(x) - (1-t) ln(1-σ(x))` without overflow.
#[inline]
pub(super) fn bce_logit<T: Scalar>(x: T, t: T) -> T {
    x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p()
}

/// Row/column strides of the logical `m x k` left operand.
fn a_strides(spec: &MatMulSpec) -> (isize, isize) {
    if spec.trans_a {
        (1, spec.m as isize)
    } else {
        (spec.k as isize, 1)
    }
}

/// Row/column strides of the logical `k x n` right operand.
fn b_strides(spec: &MatMulSpec) -> (isize, isize) {
    if spec.trans_b {
        (1, spec.k as isize)
    } else {
        (spec.n as isize, 1)
    }
}

pub(super) fn matmul_forward<T: Scalar>(spec: &MatMulSpec, a: &[T], b: &[T], out: &mut [T]) {
    let MatMulSpec { batch, m, k, n, shared_b, trans_a, .. } = *spec;
    let (rsa, csa) = a_strides(spec);
    let (rsb, csb) = b_strides(spec);
    if shared_b && !trans_a {
        T::gemm(batch * m, k, n, T::one(), a, rsa, csa, b, rsb, csb, T::zero(), out, n as isize, 1);
        return;
    }
    for bi in 0..batch {
        let a_s = &a[bi * m * k..(bi + 1) * m * k];
        let b_s = if shared_b { b } else { &b[bi * k * n..(bi + 1) * k * n] };
        let c_s = &mut out[bi * m * n..(bi + 1) * m * n];
        T::gemm(m, k, n, T::one(), a_s, rsa, csa, b_s, rsb, csb, T::zero(), c_s, n as isize, 1);
    }
}

/// Accumulates `dA = dC Bᵀ` into the stored layout of `a`.
pub(super) fn matmul_backward_a<T: Scalar>(spec: &MatMulSpec, gc: &[T], b: &[T], ga: &mut [T]) {
    let MatMulSpec { batch, m, k, n, shared_b, trans_a, .. } = *spec;
    let (rsa, csa) = a_strides(spec);
    let (rsb, csb) = b_strides(spec);
    // Bᵀ as a logical n x k operand.
    let (rbt, cbt) = (csb, rsb);
    if shared_b && !trans_a {
        T::gemm(batch * m, n, k, T::one(), gc, n as isize, 1, b, rbt, cbt, T::one(), ga, rsa, csa);
        return;
    }
    for bi in 0..batch {
        let g_s = &gc[bi * m * n..(bi + 1) * m * n];
        let b_s = if shared_b { b } else { &b[bi * k * n..(bi + 1) * k * n] };
        let ga_s = &mut ga[bi * m * k..(bi + 1) * m * k];
        T::gemm(m, n, k, T::one(), g_s, n as isize, 1, b_s, rbt, cbt, T::one(), ga_s, rsa, csa);
    }
}

/// Accumulates `dB = Aᵀ dC` into the stored layout of `b`.
pub(super) fn matmul_backward_b<T: Scalar>(spec: &MatMulSpec, gc: &[T], a: &[T], gb: &mut [T]) {
    let MatMulSpec { batch, m, k, n, shared_b, trans_a, .. } = *spec;
    let (rsa, csa) = a_strides(spec);
    let (rsb, csb) = b_strides(spec);
    // Aᵀ as a logical k x m operand.
    let (rat, cat) = (csa, rsa);
    if shared_b && !trans_a {
        T::gemm(k, batch * m, n, T::one(), a, rat, cat, gc, n as isize, 1, T::one(), gb, rsb, csb);
        return;
    }
    for bi in 0..batch {
        let a_s = &a[bi * m * k..(bi + 1) * m * k];
        let g_s = &gc[bi * m * n..(bi + 1) * m * n];
        let gb_s = if shared_b { &mut gb[..] } else { &mut gb[bi * k * n..(bi + 1) * k * n] };
        T::gemm(k, m, n, T::one(), a_s, rat, cat, g_s, n as isize, 1, T::one(), gb_s, rsb, csb);
    }
}

/// Row-wise softmax; `Err(())` when some row has no unmasked slot.
pub(super) fn softmax_rows<T: Scalar>(
    x: &[T],
    mask: Option<&[bool]>,
    width: usize,
    out: &mut [T],
) -> Result<(), ()> {
    if width == 0 {
        return Ok(());
    }
    for (r, (row, o)) in x.chunks(width).zip(out.chunks_mut(width)).enumerate() {
        let m = mask.map(|m| &m[r * width..(r + 1) * width]);
        let keep = |j: usize| m.is_none_or(|m| m[j]);
        let mut mx = T::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) && v > mx {
                mx = v;
            }
        }
        if mx == T::neg_infinity() {
            return Err(());
        }
        let mut total = T::zero();
        for (j, (oj, &v)) in o.iter_mut().zip(row).enumerate() {
            *oj = if keep(j) { (v - mx).exp() } else { T::zero() };
            total += *oj;
        }
        let inv = T::one() / total;
        o.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(())
}

/// Per-row standardization: returns `(xhat, 1/std)`.
pub(super) fn normalize_rows<T: Scalar>(x: &[T], d: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / d.max(1);
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = T::one() / T::from_usize_lossy(d);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for (h, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
            *h = (v - mean) * rs;
        }
    }
    (xhat, rstd)
}

pub(super) fn layer_norm_backward<T: Scalar>(
    gy: &[T],
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    d: usize,
    gx: &mut [T],
) {
    let inv_d = T::one() / T::from_usize_lossy(d);
    let mut dxhat = vec![T::zero(); d];
    for (r, &rs) in rstd.iter().enumerate() {
        let g = &gy[r * d..(r + 1) * d];
        let h = &xhat[r * d..(r + 1) * d];
        let mut mean_dh = T::zero();
        let mut mean_dh_h = T::zero();
        for j in 0..d {
            dxhat[j] = g[j] * gamma[j];
            mean_dh += dxhat[j];
            mean_dh_h += dxhat[j] * h[j];
        }
        mean_dh *= inv_d;
        mean_dh_h *= inv_d;
        for (j, out) in gx[r * d..(r + 1) * d].iter_mut().enumerate() {
            *out += rs * (dxhat[j] - mean_dh - h[j] * mean_dh_h);
        }
    }
}

/// Axis permutation copy: output axis `d` is input axis `axes[d]`.
pub(super) fn permute<T: Scalar>(x: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let numel = x.len();
    let mut out = Vec::with_capacity(numel);
    if numel == 0 {
        return (out_shape, out);
    }
    if rank == 0 {
        out.extend_from_slice(x);
        return (out_shape, out);
    }
    let last = rank - 1;
    let (inner_len, inner_stride) = (out_shape[last], strides[last]);
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let outer = numel / inner_len.max(1);
    for _ in 0..outer {
        if inner_stride == 1 {
            out.extend_from_slice(&x[base..base + inner_len]);
        } else {
            out.extend((0..inner_len).map(|j| x[base + j * inner_stride]));
        }
        for d in (0..last).rev() {
            idx[d] += 1;
            base += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_2d_is_transpose() {
        let x = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (s, y) = permute(&x, &[2, 3], &[1, 0]);
        assert_eq!(s, vec![3, 2]);
        assert_eq!(y, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        assert!(bce_logit(1000.0f32, 1.0) < 1e-6);
        assert!((bce_logit(-1000.0f32, 1.0) - 1000.0).abs() < 1e-3);
        assert!((bce_logit(0.0f64, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
