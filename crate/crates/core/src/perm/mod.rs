//! SoftSort, hard argsort permutations and the entropy penalty.
//!
//! Scores sort in descending order: the largest score is rank 0. A soft
//! permutation has ranks as rows and input nodes as columns, so
//! `P̂[r][j] ≈ 1` when node `j` holds rank `r`. Ties are broken by the smaller
//! original index.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::autodiff::{Tape, UnaryKind, Var};
use crate::error::{PermError, TensorError};
use crate::graph::Permutation;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

type Result<T, E = PermError> = std::result::Result<T, E>;

static SIGN_MUTATION: AtomicBool = AtomicBool::new(false);

/// Test hook: flips the sign inside the SoftSort kernel so property suites
/// can demonstrate that they catch the fault.
#[doc(hidden)]
pub fn inject_softsort_sign_error(enabled: bool) {
    SIGN_MUTATION.store(enabled, Ordering::SeqCst);
}

fn sign() -> f64 {
    if SIGN_MUTATION.load(Ordering::SeqCst) {
        1.0
    } else {
        -1.0
    }
}

fn check_scores<T: Scalar>(scores: &[T], tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(PermError::BadTemperature(tau));
    }
    if scores.is_empty() {
        return Err(PermError::SizeMismatch("no scores".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(PermError::NonFiniteScores);
    }
    Ok(())
}

/// Indices of `scores` from largest to smallest, stable on ties.
pub fn argsort_desc<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

/// `P̂ = softmax_rows(-|sort(s) 1ᵀ - 1 sᵀ| / τ)` as a row-major `n x n` matrix.
pub fn softsort<T: Scalar>(scores: &[T], tau: f64) -> Result<Vec<T>> {
    check_scores(scores, tau)?;
    let n = scores.len();
    let order = argsort_desc(scores);
    let k = T::from_f64_lossy(sign() / tau);
    let mut p = vec![T::zero(); n * n];
    for (r, row) in p.chunks_mut(n).enumerate() {
        let sr = scores[order[r]];
        for (j, v) in row.iter_mut().enumerate() {
            *v = k * (sr - scores[j]).abs();
        }
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(p)
}

/// Hard permutation with row `i` selecting the index of the `i`-th largest score.
pub fn hard_perm_from_scores<T: Scalar>(scores: &[T]) -> Result<Permutation> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(PermError::NonFiniteScores);
    }
    Ok(Permutation::new(argsort_desc(scores)).expect("argsort is a bijection"))
}

/// `C(P) = Σ_rows H(p̄) + Σ_cols H(p̄)` in nats, with lines normalized to sum to one.
pub fn entropy_penalty<T: Scalar>(p: &[T], rows: usize, cols: usize) -> Result<f64> {
    if p.len() != rows * cols {
        return Err(PermError::SizeMismatch(format!("{} entries for {rows}x{cols}", p.len())));
    }
    if p.iter().any(|&v| v < T::zero()) {
        return Err(PermError::Negative);
    }
    let at = |i: usize, j: usize| p[i * cols + j].to_f64_lossy();
    let entropy = |vals: &mut dyn Iterator<Item = f64>, line: usize| -> Result<f64> {
        let vals: Vec<f64> = vals.collect();
        let total: f64 = vals.iter().sum();
        if total <= 0.0 {
            return Err(PermError::ZeroLine(line));
        }
        Ok(-vals.iter().map(|&v| v / total).filter(|&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>())
    };
    let mut c = 0.0;
    for i in 0..rows {
        c += entropy(&mut (0..cols).map(|j| at(i, j)), i)?;
    }
    for j in 0..cols {
        c += entropy(&mut (0..rows).map(|i| at(i, j)), j)?;
    }
    Ok(c)
}

/// Nonnegative within `tol`, doubly stochastic within `tol`, and `C(P) < tol`.
pub fn is_permutation<T: Scalar>(p: &[T], rows: usize, cols: usize, tol: f64) -> Result<bool> {
    if rows != cols {
        return Err(PermError::NotSquare { rows, cols });
    }
    if p.len() != rows * cols {
        return Err(PermError::SizeMismatch(format!("{} entries for {rows}x{cols}", p.len())));
    }
    let n = rows;
    let v = |i: usize, j: usize| p[i * n + j].to_f64_lossy();
    if (0..n * n).any(|k| v(k / n, k % n) < -tol) {
        return Ok(false);
    }
    for i in 0..n {
        let r: f64 = (0..n).map(|j| v(i, j)).sum();
        let c: f64 = (0..n).map(|j| v(j, i)).sum();
        if (r - 1.0).abs() > tol || (c - 1.0).abs() > tol {
            return Ok(false);
        }
    }
    let clipped: Vec<f64> = p.iter().map(|x| x.to_f64_lossy().max(0.0)).collect();
    Ok(entropy_penalty(&clipped, n, n)? < tol)
}

/// `P · rows` for an `n x n` matrix and `n x d` rows.
pub fn apply_soft_perm<T: Scalar>(p: &[T], n: usize, rows: &[T], d: usize) -> Result<Vec<T>> {
    if p.len() != n * n || rows.len() != n * d {
        return Err(PermError::SizeMismatch(format!(
            "{} matrix entries and {} row entries for n={n}, d={d}",
            p.len(),
            rows.len()
        )));
    }
    let mut out = vec![T::zero(); n * d];
    T::gemm(n, n, d, T::one(), p, n as isize, 1, rows, d as isize, 1, T::zero(), &mut out, d as isize, 1);
    Ok(out)
}

/// Batched SoftSort on the tape.
///
/// `scores` is `[B, N]` with graph `b` occupying the first `sizes[b]`
/// entries. Returns `[B, N, N]` soft permutations whose rows and columns
/// beyond `sizes[b]` are exactly zero.
pub fn softsort_tape<T: Scalar>(
    tape: &mut Tape<T>,
    scores: Var,
    sizes: &[usize],
    tau: f64,
) -> Result<Var, crate::Error> {
    let shape = tape.shape(scores).to_vec();
    let (b, n) = match shape[..] {
        [b, n] if b == sizes.len() && sizes.iter().all(|&s| (1..=n).contains(&s)) => (b, n),
        _ => return Err(PermError::SizeMismatch(format!("scores {shape:?} for sizes {sizes:?}")).into()),
    };
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(PermError::BadTemperature(tau).into());
    }
    let values = tape.value(scores).data().to_vec();
    let mut order = Vec::with_capacity(b * n);
    let mut col_mask = vec![false; b * n * n];
    let mut row_mask = vec![T::zero(); b * n];
    for (g, &s) in sizes.iter().enumerate() {
        let real = &values[g * n..g * n + s];
        if real.iter().any(|v| !v.is_finite()) {
            return Err(PermError::NonFiniteScores.into());
        }
        order.extend(argsort_desc(real).into_iter().map(|j| g * n + j));
        order.extend((s..n).map(|j| g * n + j));
        for r in 0..n {
            col_mask[(g * n + r) * n..(g * n + r) * n + s].fill(true);
        }
        row_mask[g * n..g * n + s].fill(T::one());
    }
    let flat = tape.reshape(scores, &[b * n, 1])?;
    let sorted = tape.gather_rows(flat, &order)?;
    let sorted = tape.reshape(sorted, &[b, n, 1])?;
    let cols = tape.reshape(scores, &[b, 1, n])?;
    let diff = tape.sub(sorted, cols)?;
    let dist = tape.abs(diff)?;
    let logits = tape.mul_scalar(dist, T::from_f64_lossy(sign() / tau))?;
    let p = tape.softmax_masked(logits, Some(&col_mask))?;
    let rows = tape.constant(Tensor::new(&[b, n, 1], row_mask)?);
    Ok(tape.mul(p, rows)?)
}

/// Batch-mean of `C(P̂)` over `[B, N, N]` soft permutations padded as in [`softsort_tape`].
pub fn entropy_penalty_tape<T: Scalar>(tape: &mut Tape<T>, p: Var, sizes: &[usize]) -> Result<Var, TensorError> {
    let shape = tape.shape(p).to_vec();
    let (b, n) = match shape[..] {
        [b, n, m] if n == m && b == sizes.len() => (b, n),
        _ => {
            return Err(TensorError::ShapeMismatch {
                op: "entropy_penalty",
                detail: format!("{shape:?} for {} graphs", sizes.len()),
            })
        }
    };
    // Padded lines sum to zero; adding one keeps their normalized entries at zero.
    let mut pad = vec![T::zero(); b * n];
    for (g, &s) in sizes.iter().enumerate() {
        pad[g * n + s..(g + 1) * n].fill(T::one());
    }
    let mut total = None;
    for (axis, line_shape) in [(2, [b, n, 1]), (1, [b, 1, n])] {
        let sums = tape.sum_axis(p, axis)?;
        let pad_v = tape.constant(Tensor::new(&[b, n], pad.clone())?);
        let sums = tape.add(sums, pad_v)?;
        let sums = tape.reshape(sums, &line_shape)?;
        let q = tape.div(p, sums)?;
        let h = tape.unary(UnaryKind::XLogX, q)?;
        let h = tape.sum(h)?;
        total = Some(match total {
            None => h,
            Some(t) => tape.add(t, h)?,
        });
    }
    let total = total.expect("two terms");
    tape.mul_scalar(total, T::from_f64_lossy(-1.0 / b as f64))
}

/// `P̂ᵀ · rows` per graph: `[B, N, N]` with `[N, d]` gives `[B, N, d]`.
///
/// Row `j` of the result is the row assigned to input node `j`.
pub fn assign_rows_tape<T: Scalar>(tape: &mut Tape<T>, p: Var, rows: Var) -> Result<Var, TensorError> {
    let pt = tape.transpose(p)?;
    tape.matmul(pt, rows)
}
