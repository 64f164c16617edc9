use super::gradcheck::{check_registered_ops, finite_difference_check};
use super::*;
use crate::rng::Rng;

fn t64(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

#[test]
fn matmul_with_identity_padding() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf("a", t64(&[2, 3], &[1., 2., 3., 4., 5., 6.]), false).unwrap();
    let b = tape.leaf("b", t64(&[3, 2], &[1., 0., 0., 1., 0., 0.]), false).unwrap();
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[1., 2., 4., 5.]);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[3, 3]));
    let y = tape.softmax(x).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn masked_softmax_single_slot_is_one_hot() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::from_f64(&[2, 3], &[0.3, -2.0, 5.0, 1.0, 1.0, 1.0]).unwrap());
    let mask = [false, true, false, false, false, true];
    let y = tape.softmax_masked(x, Some(&mask)).unwrap();
    assert_eq!(tape.value(y).data(), &[0., 1., 0., 0., 0., 1.]);
}

#[test]
fn fully_masked_row_is_an_error() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2]));
    let err = tape.softmax_masked(x, Some(&[false, false])).unwrap_err();
    assert!(matches!(err, TensorError::AllMasked { .. }));
}

#[test]
fn gradient_of_sum_is_ones() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf("x", t64(&[2, 2], &[1., -2., 3., 0.5]), true).unwrap();
    let s = tape.sum(x).unwrap();
    let g = tape.gradient(s, &["x"]).unwrap();
    assert_eq!(g["x"].data(), &[1., 1., 1., 1.]);
}

#[test]
fn gradient_of_square() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf("x", Tensor::scalar(3.0), true).unwrap();
    let y = tape.mul(x, x).unwrap();
    let g = tape.gradient(y, &["x"]).unwrap();
    assert_eq!(g["x"].item(), Some(6.0));
}

#[test]
fn gradient_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf("x", t64(&[2], &[1., 2.]), true).unwrap();
    let c = tape.leaf("c", t64(&[2], &[1., 2.]), false).unwrap();
    let y = tape.mul(x, c).unwrap();
    assert!(matches!(tape.backward(y), Err(TensorError::NonScalarOutput(_))));
    let s = tape.sum(y).unwrap();
    assert!(matches!(tape.gradient(s, &["c"]), Err(TensorError::NoGrad(_))));
    assert!(matches!(tape.gradient(s, &["nope"]), Err(TensorError::UnboundLeaf(_))));
    assert!(matches!(tape.input("missing"), Err(TensorError::UnboundLeaf(_))));
}

#[test]
fn shape_mismatch_is_reported() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    assert!(matches!(tape.add(a, b), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn non_finite_intermediate_is_reported() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t64(&[2], &[0.0, 1.0]));
    assert!(matches!(tape.log(a), Err(TensorError::NonFinite { op: "log" })));
}

#[test]
fn softmax_column_gradient_matches_finite_differences() {
    let mut rng = Rng::new(11);
    let x = Tensor::new(&[4, 4], (0..16).map(|_| rng.normal()).collect()).unwrap();
    let err = finite_difference_check(
        |t, x| {
            let y = t.softmax(x)?;
            let picked = t.permute(y, &[1, 0])?;
            let first = t.gather_rows(picked, &[0])?;
            t.sum(first)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn linear_maps_are_exact_under_finite_differences() {
    let x = t64(&[2, 3], &[0.1, -0.4, 2.0, 1.5, -3.0, 0.7]);
    let err = finite_difference_check(
        |t, x| {
            let y = t.mul_scalar(x, 2.0)?;
            t.sum_axis(y, 0)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-9, "rel err {err}");
}

#[test]
fn every_registered_op_passes_gradient_check() {
    for (name, err) in check_registered_ops(10, 5, 1e-6).unwrap() {
        assert!(err < 1e-4, "{name}: rel err {err}");
    }
}

#[test]
fn evaluation_is_bit_reproducible() {
    let run = || {
        let mut rng = Rng::new(2);
        let mut tape = Tape::<f32>::new();
        let x = tape
            .leaf("x", Tensor::new(&[4, 8], (0..32).map(|_| rng.normal() as f32).collect()).unwrap(), true)
            .unwrap();
        let w = tape
            .leaf("w", Tensor::new(&[8, 8], (0..64).map(|_| rng.normal() as f32).collect()).unwrap(), true)
            .unwrap();
        let y = tape.matmul(x, w).unwrap();
        let y = tape.softmax(y).unwrap();
        let s = tape.sum_weighted(y, &Tensor::full(&[4, 8], 0.3)).unwrap();
        let g = tape.gradient(s, &["w"]).unwrap();
        (tape.value(y).clone(), g["w"].clone())
    };
    assert_eq!(run(), run());
}

/// Fused ops against their decomposition into primitive ops.
mod composition {
    use super::*;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    fn value_and_grad(
        x: &Tensor<f64>,
        f: impl Fn(&mut Tape<f64>, Var) -> Var,
    ) -> (Tensor<f64>, Tensor<f64>) {
        let mut tape = Tape::new();
        let xv = tape.leaf("x", x.clone(), true).unwrap();
        let y = f(&mut tape, xv);
        let w = Tensor::new(tape.shape(y), gradcheck::reduction_weights(tape.value(y).numel())).unwrap();
        let s = tape.sum_weighted(y, &w).unwrap();
        let g = tape.gradient(s, &["x"]).unwrap().remove("x").unwrap();
        (tape.value(y).clone(), g)
    }

    fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
        let d = a.max_abs_diff(b).expect("same shape");
        assert!(d < tol, "max diff {d}");
    }

    #[test]
    fn layer_norm_equals_decomposed() {
        let x = random(&[4, 6], 1);
        let fused = value_and_grad(&x, |t, x| {
            let g = t.constant(Tensor::ones(&[6]));
            let b = t.constant(Tensor::zeros(&[6]));
            t.layer_norm(x, g, b, 1e-5).unwrap()
        });
        let manual = value_and_grad(&x, |t, x| {
            let s = t.sum_axis(x, 1).unwrap();
            let mean = t.div_scalar(s, 6.0).unwrap();
            let mean = t.reshape(mean, &[4, 1]).unwrap();
            let c = t.sub(x, mean).unwrap();
            let sq = t.mul(c, c).unwrap();
            let v = t.sum_axis(sq, 1).unwrap();
            let v = t.div_scalar(v, 6.0).unwrap();
            let v = t.add_scalar(v, 1e-5).unwrap();
            let sd = t.sqrt(v).unwrap();
            let sd = t.reshape(sd, &[4, 1]).unwrap();
            t.div(c, sd).unwrap()
        });
        assert_close(&fused.0, &manual.0, 1e-12);
        assert_close(&fused.1, &manual.1, 1e-10);
    }

    #[test]
    fn bce_equals_decomposed() {
        let x = random(&[3, 4], 2);
        let target = Tensor::new(&[3, 4], (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap();
        let ones = Tensor::ones(&[3, 4]);
        let fused = value_and_grad(&x, |t, x| t.bce_with_logits(x, &target, &ones).unwrap());
        let manual = value_and_grad(&x, |t, x| {
            let p = t.unary(UnaryKind::Sigmoid, x).unwrap();
            let lp = t.log(p).unwrap();
            let one_minus = t.mul_scalar(p, -1.0).unwrap();
            let one_minus = t.add_scalar(one_minus, 1.0).unwrap();
            let lq = t.log(one_minus).unwrap();
            let tt = t.constant(target.clone());
            let a = t.mul(tt, lp).unwrap();
            let nt = t.constant(target.map(|v| 1.0 - v));
            let b = t.mul(nt, lq).unwrap();
            let s = t.add(a, b).unwrap();
            t.mul_scalar(s, -1.0).unwrap()
        });
        assert_close(&fused.0, &manual.0, 1e-12);
        assert_close(&fused.1, &manual.1, 1e-12);
    }

    #[test]
    fn log_softmax_equals_log_of_softmax() {
        let x = random(&[3, 5], 3);
        let fused = value_and_grad(&x, |t, x| t.log_softmax(x).unwrap());
        let manual = value_and_grad(&x, |t, x| {
            let s = t.softmax(x).unwrap();
            t.log(s).unwrap()
        });
        assert_close(&fused.0, &manual.0, 1e-12);
        assert_close(&fused.1, &manual.1, 1e-12);
    }

    #[test]
    fn linear_equals_matmul_plus_bias() {
        let x = random(&[2, 3, 4], 4);
        let w = random(&[4, 2], 5);
        let b = random(&[2], 6);
        let fused = value_and_grad(&x, |t, x| {
            let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
            t.linear(x, wv, bv).unwrap()
        });
        let manual = value_and_grad(&x, |t, x| {
            let wv = t.constant(w.clone());
            let bv = t.constant(b.clone());
            let flat = t.reshape(x, &[6, 4]).unwrap();
            let y = t.matmul(flat, wv).unwrap();
            let y = t.add(y, bv).unwrap();
            t.reshape(y, &[2, 3, 2]).unwrap()
        });
        assert_close(&fused.0, &manual.0, 1e-12);
        assert_close(&fused.1, &manual.1, 1e-12);
    }
}
