//! Central finite-difference checks of tape gradients (64-bit).

use crate::error::TensorError;
use crate::tensor::Tensor;

use super::{Tape, UnaryKind, Var};

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-12;

/// Fixed pseudo-random reduction weights in `[0.5, 1.5)`.
pub fn reduction_weights(n: usize) -> Vec<f64> {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            0.5 + (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

fn reduce(tape: &mut Tape<f64>, y: Var) -> Result<Var, TensorError> {
    let w = Tensor::new(tape.shape(y), reduction_weights(tape.value(y).numel()))?;
    tape.sum_weighted(y, &w)
}

fn eval_scalar<F>(f: &F, x: Tensor<f64>) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf("x", x, false)?;
    let y = f(&mut tape, xv)?;
    let s = reduce(&mut tape, y)?;
    Ok(tape.value(s).data()[0])
}

/// `|analytic - central| / (|analytic| + REL_FLOOR)` maximized over coordinates.
///
/// Each coordinate uses the step `h * max(1, |x_i|)`.
pub fn finite_difference_check<F>(f: F, point: &Tensor<f64>, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
{
    let analytic = {
        let mut tape = Tape::new();
        let x = tape.leaf("x", point.clone(), true)?;
        let y = f(&mut tape, x)?;
        let s = reduce(&mut tape, y)?;
        tape.gradient(s, &["x"])?.remove("x").expect("requested leaf")
    };
    let mut worst = 0.0f64;
    for i in 0..point.numel() {
        let step = h * point.data()[i].abs().max(1.0);
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let fd = (eval_scalar(&f, plus)? - eval_scalar(&f, minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - fd).abs() / (a.abs() + REL_FLOOR);
        if !err.is_finite() {
            return Err(TensorError::NonFinite { op: "finite_difference_check" });
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Directional variant for functions of several named tensors: for each
/// tensor, compares `∇f·v` against `(f(x+hv) - f(x-hv)) / 2h` along a fixed
/// unit direction `v`. Returns the relative error per tensor.
///
/// The denominator is floored at the round-off level of the central difference,
/// `8 ε max(1, |f(x)|) / step`.
pub fn directional_check<F>(
    f: F,
    points: &[(String, Tensor<f64>)],
    h: f64,
) -> Result<Vec<(String, f64)>, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let build = |values: Vec<Tensor<f64>>, grad: bool| -> Result<(Tape<f64>, Var), TensorError> {
        let mut tape = Tape::new();
        let mut vars = Vec::with_capacity(values.len());
        for ((name, _), v) in points.iter().zip(values) {
            vars.push(tape.leaf(name, v, grad)?);
        }
        let out = f(&mut tape, &vars)?;
        if tape.value(out).numel() != 1 {
            return Err(TensorError::NonScalarOutput(tape.shape(out).to_vec()));
        }
        Ok((tape, out))
    };
    let base: Vec<Tensor<f64>> = points.iter().map(|(_, t)| t.clone()).collect();
    let (tape, out) = build(base.clone(), true)?;
    let f0 = tape.value(out).data()[0];
    let grads = tape.backward(out)?;
    let mut report = Vec::with_capacity(points.len());
    for (k, (name, t)) in points.iter().enumerate() {
        let mut dir: Vec<f64> = reduction_weights(t.numel() + k + 1)[k + 1..]
            .iter()
            .enumerate()
            .map(|(i, w)| if i % 2 == 0 { w - 0.4 } else { 0.4 - w })
            .collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        dir.iter_mut().for_each(|v| *v /= norm);
        let g = grads.by_name(name).expect("leaf requires grad");
        let analytic: f64 = g.data().iter().zip(&dir).map(|(a, b)| a * b).sum();
        let step = h * t.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let shifted = |sign: f64| -> Result<f64, TensorError> {
            let mut vals = base.clone();
            for (x, d) in vals[k].data_mut().iter_mut().zip(&dir) {
                *x += sign * step * d;
            }
            let (tp, o) = build(vals, false)?;
            Ok(tp.value(o).data()[0])
        };
        let fd = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * step);
        let noise = 8.0 * f64::EPSILON * f0.abs().max(1.0) / step;
        let err = (analytic - fd).abs() / (analytic.abs() + noise.max(REL_FLOOR));
        report.push((name.clone(), err));
    }
    Ok(report)
}

/// One registered op wrapped as a single-input function for gradient checks.
pub struct OpCheck {
    pub name: &'static str,
    pub shape: &'static [usize],
    pub build: fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
}

/// Deterministic constant in `[-1, 1)` used as the fixed operand of binary ops.
fn fixed(tape: &mut Tape<f64>, shape: &[usize], salt: usize) -> Var {
    let n: usize = shape.iter().product();
    let w = reduction_weights(n + salt);
    let data = w[salt..].iter().map(|v| 2.0 * (v - 1.0)).collect();
    tape.constant(Tensor::new(shape, data).expect("shape"))
}

/// Every op of the tape vocabulary, with each differentiable operand
/// position exercised at least once.
pub fn registered_ops() -> Vec<OpCheck> {
    vec![
        OpCheck { name: "add", shape: &[3, 4], build: |t, x| {
            let c = fixed(t, &[4], 1);
            t.add(x, c)
        } },
        OpCheck { name: "add(broadcast rhs)", shape: &[4], build: |t, x| {
            let c = fixed(t, &[3, 4], 2);
            t.add(c, x)
        } },
        OpCheck { name: "sub", shape: &[2, 3], build: |t, x| {
            let c = fixed(t, &[2, 1], 3);
            let y = t.sub(x, c)?;
            t.sub(c, y)
        } },
        OpCheck { name: "mul", shape: &[2, 3], build: |t, x| {
            let xt = t.transpose(x)?;
            let xt = t.reshape(xt, &[2, 3])?;
            t.mul(x, xt)
        } },
        OpCheck { name: "div", shape: &[2, 3], build: |t, x| {
            let d = t.unary(UnaryKind::Square, x)?;
            let d = t.add_scalar(d, 1.0)?;
            let c = fixed(t, &[3], 4);
            let n = t.add(x, c)?;
            t.div(n, d)
        } },
        OpCheck { name: "add_scalar", shape: &[5], build: |t, x| t.add_scalar(x, 0.7) },
        OpCheck { name: "mul_scalar", shape: &[5], build: |t, x| t.mul_scalar(x, -1.3) },
        OpCheck { name: "div_scalar", shape: &[5], build: |t, x| t.div_scalar(x, 3.0) },
        OpCheck { name: "matmul", shape: &[3, 4], build: |t, x| {
            let w = fixed(t, &[4, 2], 5);
            let y = t.matmul(x, w)?;
            let a = fixed(t, &[2, 3], 6);
            let z = t.matmul(a, x)?;
            let zs = t.sum(z)?;
            t.mul(y, zs)
        } },
        OpCheck { name: "matmul(batched, transposed)", shape: &[2, 3, 4], build: |t, x| {
            let y = t.matmul_t(x, x, false, true)?;
            let z = t.matmul_t(x, y, true, false)?;
            let w = fixed(t, &[3, 2], 7);
            let q = t.matmul_t(x, w, true, false)?;
            let qs = t.sum(q)?;
            t.add(z, qs)
        } },
        OpCheck { name: "linear", shape: &[2, 3, 4], build: |t, x| {
            let w = fixed(t, &[4, 5], 8);
            let b = fixed(t, &[5], 9);
            t.linear(x, w, b)
        } },
        OpCheck { name: "softmax(masked)", shape: &[4, 4], build: |t, x| {
            let mask = [true, true, false, true, true, false, true, true, true, true, true, false, false, true, true, true];
            let y = t.softmax_masked(x, Some(&mask))?;
            let y2 = t.softmax(x)?;
            let c = fixed(t, &[4], 10);
            let y2 = t.mul(y2, c)?;
            t.add(y, y2)
        } },
        OpCheck { name: "log_softmax", shape: &[3, 5], build: |t, x| t.log_softmax(x) },
        OpCheck { name: "relu", shape: &[6], build: |t, x| t.relu(x) },
        OpCheck { name: "exp", shape: &[6], build: |t, x| t.exp(x) },
        OpCheck { name: "log", shape: &[6], build: |t, x| {
            let s = t.unary(UnaryKind::Square, x)?;
            let s = t.add_scalar(s, 0.5)?;
            t.log(s)
        } },
        OpCheck { name: "sqrt", shape: &[6], build: |t, x| {
            let s = t.unary(UnaryKind::Square, x)?;
            let s = t.add_scalar(s, 0.5)?;
            t.sqrt(s)
        } },
        OpCheck { name: "abs", shape: &[6], build: |t, x| t.abs(x) },
        OpCheck { name: "square", shape: &[6], build: |t, x| t.unary(UnaryKind::Square, x) },
        OpCheck { name: "sigmoid", shape: &[6], build: |t, x| t.unary(UnaryKind::Sigmoid, x) },
        OpCheck { name: "xlogx", shape: &[6], build: |t, x| {
            let p = t.unary(UnaryKind::Sigmoid, x)?;
            t.unary(UnaryKind::XLogX, p)
        } },
        OpCheck { name: "sum", shape: &[2, 3], build: |t, x| {
            let s = t.sum(x)?;
            t.mul(s, s)
        } },
        OpCheck { name: "mean", shape: &[2, 3], build: |t, x| {
            let s = t.mean(x)?;
            let e = t.exp(x)?;
            t.mul(e, s)
        } },
        OpCheck { name: "sum_axis", shape: &[2, 3, 4], build: |t, x| {
            let a = t.sum_axis(x, 1)?;
            let b = t.sum_axis(x, 0)?;
            let b = t.sum_axis(b, 1)?;
            let a2 = t.unary(UnaryKind::Square, a)?;
            let s = t.sum(b)?;
            t.mul(a2, s)
        } },
        OpCheck { name: "sum_weighted", shape: &[2, 3], build: |t, x| {
            let w = Tensor::new(&[2, 3], vec![1.0, 0.0, 1.0, 0.5, 1.0, 0.0]).expect("shape");
            let s = t.sum_weighted(x, &w)?;
            t.unary(UnaryKind::Square, s)
        } },
        OpCheck { name: "permute", shape: &[2, 3, 4], build: |t, x| {
            let p = t.permute(x, &[2, 0, 1])?;
            let c = fixed(t, &[4, 2, 3], 11);
            t.mul(p, c)
        } },
        OpCheck { name: "reshape", shape: &[2, 3], build: |t, x| {
            let r = t.reshape(x, &[3, 2])?;
            let c = fixed(t, &[3, 2], 12);
            t.mul(r, c)
        } },
        OpCheck { name: "concat", shape: &[2, 3], build: |t, x| {
            let e = t.exp(x)?;
            let c = fixed(t, &[2, 2], 13);
            t.concat(&[x, c, e])
        } },
        OpCheck { name: "gather_rows", shape: &[4, 2], build: |t, x| {
            let g = t.gather_rows(x, &[3, 0, 3, 1, 3])?;
            let c = fixed(t, &[5, 2], 14);
            t.mul(g, c)
        } },
        OpCheck { name: "layer_norm", shape: &[3, 5], build: |t, x| {
            let g = t.leaf("gamma", Tensor::new(&[5], vec![1.0, 0.5, -0.3, 2.0, 1.1]).expect("shape"), false)?;
            let b = fixed(t, &[5], 15);
            let y = t.layer_norm(x, g, b, 1e-5)?;
            let c = fixed(t, &[3, 5], 16);
            t.mul(y, c)
        } },
        OpCheck { name: "layer_norm(affine)", shape: &[5], build: |t, g| {
            let x = fixed(t, &[3, 5], 17);
            t.layer_norm(x, g, g, 1e-5)
        } },
        OpCheck { name: "bce_with_logits", shape: &[2, 3], build: |t, x| {
            let target = Tensor::new(&[2, 3], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).expect("shape");
            let weight = Tensor::new(&[2, 3], vec![1.0, 1.0, 0.5, 2.0, 1.0, 0.0]).expect("shape");
            t.bce_with_logits(x, &target, &weight)
        } },
    ]
}

/// Runs [`finite_difference_check`] on `points` random normal points per op.
pub fn check_registered_ops(
    points: usize,
    seed: u64,
    h: f64,
) -> Result<Vec<(&'static str, f64)>, TensorError> {
    let mut rng = crate::rng::Rng::new(seed);
    registered_ops()
        .into_iter()
        .map(|op| {
            let mut worst = 0.0f64;
            for _ in 0..points {
                let n: usize = op.shape.iter().product();
                let data = (0..n).map(|_| rng.normal()).collect();
                let x = Tensor::new(op.shape, data)?;
                worst = worst.max(finite_difference_check(op.build, &x, h)?);
            }
            Ok((op.name, worst))
        })
        .collect()
}
