use pigvae::autodiff::gradcheck::finite_difference_check;
use pigvae::error::{PermError, TensorError};
use pigvae::graph::Permutation;
use pigvae::perm::*;
use pigvae::rng::Rng;
use pigvae::{Error, Tape, Tensor};
use proptest::prelude::*;

fn h(p: f64) -> f64 {
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn to_tensor_err(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::InvalidArgument { op: "softsort", detail: other.to_string() },
    }
}

#[test]
fn softsort_worked_example() {
    let p = softsort(&[2.0f64, 1.0], 1.0).unwrap();
    let expect = [0.7311, 0.2689, 0.2689, 0.7311];
    for (a, b) in p.iter().zip(expect) {
        assert!((a - b).abs() < 1e-4);
    }
    // Exact: rows are softmax([0, -1]) and softmax([-1, 0]).
    let s = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((p[0] - s).abs() < 1e-15);
}

#[test]
fn softsort_low_temperature_limits() {
    let p = softsort(&[3.0f64, 1.0, -2.0], 1e-3).unwrap();
    let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    assert!(p.iter().zip(id).all(|(a, b)| (a - b).abs() < 1e-3));
    let swap = softsort(&[1.0f64, 3.0], 1e-3).unwrap();
    assert!(swap.iter().zip([0.0, 1.0, 1.0, 0.0]).all(|(a, b)| (a - b).abs() < 1e-3));
}

#[test]
fn softsort_rejects_bad_input() {
    assert_eq!(softsort(&[1.0, 2.0], 0.0), Err(PermError::BadTemperature(0.0)));
    assert_eq!(softsort(&[1.0, f64::NAN], 1.0), Err(PermError::NonFiniteScores));
}

#[test]
fn hard_permutation_examples() {
    let p = hard_perm_from_scores(&[0.2, 0.9, 0.5]).unwrap();
    assert_eq!(p.mapping(), &[1, 2, 0]);
    assert_eq!(hard_perm_from_scores(&[0.4; 5]).unwrap(), Permutation::identity(5));
    assert_eq!(hard_perm_from_scores(&[7.0]).unwrap().matrix(), vec![1.0]);
}

#[test]
fn entropy_examples() {
    let id = Permutation::identity(3).matrix();
    assert_eq!(entropy_penalty(&id, 3, 3).unwrap(), 0.0);
    let uniform = entropy_penalty(&[0.5; 4], 2, 2).unwrap();
    assert!((uniform - 4.0 * 2f64.ln()).abs() < 1e-12);
    assert!((uniform - 2.77259).abs() < 1e-5);
    let c = entropy_penalty(&[0.9, 0.1, 0.1, 0.9], 2, 2).unwrap();
    assert!((c - 4.0 * h(0.9)).abs() < 1e-12);
    assert!((c - 1.30033).abs() < 1e-5);
    assert_eq!(entropy_penalty(&[1.0, 0.0, 0.0, 0.0], 2, 2), Err(PermError::ZeroLine(1)));
    assert_eq!(entropy_penalty(&[1.0, -0.1, 0.0, 1.0], 2, 2), Err(PermError::Negative));
}

#[test]
fn permutation_predicate() {
    let hard = hard_perm_from_scores(&[0.3, -1.0, 4.0, 2.0]).unwrap().matrix();
    assert!(is_permutation(&hard, 4, 4, 1e-9).unwrap());
    assert!(!is_permutation(&[0.25; 16], 4, 4, 1e-9).unwrap());
    assert!(!is_permutation(&[1.0, 0.0, 1.0, 0.0], 2, 2, 1e-9).unwrap());
    assert_eq!(is_permutation(&[1.0, 0.0], 1, 2, 1e-9), Err(PermError::NotSquare { rows: 1, cols: 2 }));
}

#[test]
fn apply_soft_perm_examples() {
    let rows = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(apply_soft_perm(&[1.0, 0.0, 0.0, 1.0], 2, &rows, 2).unwrap(), rows);
    assert_eq!(apply_soft_perm(&[0.0, 1.0, 1.0, 0.0], 2, &rows, 2).unwrap(), [3.0, 4.0, 1.0, 2.0]);
    assert_eq!(apply_soft_perm(&[0.5; 4], 2, &rows, 2).unwrap(), [2.0, 3.0, 2.0, 3.0]);
    assert!(apply_soft_perm(&[1.0; 4], 2, &rows, 3).is_err());
}

#[test]
fn entropy_vanishes_exactly_on_permutations() {
    for n in 1..=4 {
        for m in all_permutations(n) {
            let p = Permutation::new(m).unwrap().matrix();
            assert!(entropy_penalty(&p, n, n).unwrap() < 1e-9);
            assert!(is_permutation(&p, n, n, 1e-9).unwrap());
        }
    }
}

#[test]
fn sinkhorn_matrices_have_positive_entropy() {
    let mut rng = Rng::new(17);
    for trial in 0..1000 {
        let n = 2 + trial % 5;
        let mut m: Vec<f64> = (0..n * n).map(|_| rng.uniform() + 1e-3).collect();
        for _ in 0..500 {
            for r in 0..n {
                let s: f64 = m[r * n..(r + 1) * n].iter().sum();
                m[r * n..(r + 1) * n].iter_mut().for_each(|v| *v /= s);
            }
            for c in 0..n {
                let s: f64 = (0..n).map(|r| m[r * n + c]).sum();
                (0..n).for_each(|r| m[r * n + c] /= s);
            }
        }
        assert!(entropy_penalty(&m, n, n).unwrap() > 1e-3);
        assert!(!is_permutation(&m, n, n, 1e-6).unwrap());
    }
}

#[test]
fn softsort_gradient_matches_finite_differences() {
    let mut rng = Rng::new(23);
    for _ in 0..5 {
        let x = Tensor::new(&[1, 6], (0..6).map(|_| rng.normal()).collect()).unwrap();
        let err = finite_difference_check(
            |t, s| softsort_tape(t, s, &[6], 1.0).map_err(to_tensor_err),
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }
}

#[test]
fn entropy_gradient_matches_finite_differences() {
    let mut rng = Rng::new(29);
    let x = Tensor::new(&[2, 5], (0..10).map(|_| rng.normal()).collect()).unwrap();
    let err = finite_difference_check(
        |t, s| {
            let p = softsort_tape(t, s, &[5, 3], 0.7).map_err(to_tensor_err)?;
            entropy_penalty_tape(t, p, &[5, 3])
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn soft_assignment_of_rows() {
    let mut tape = Tape::<f64>::new();
    let s = tape.constant(Tensor::from_f64(&[1, 3], &[0.2, 0.9, 0.5]).unwrap());
    let p = softsort_tape(&mut tape, s, &[3], 1e-4).unwrap();
    let rows = tape.constant(Tensor::from_f64(&[3, 1], &[10.0, 20.0, 30.0]).unwrap());
    let out = assign_rows_tape(&mut tape, p, rows).unwrap();
    // Node 1 has rank 0, node 2 rank 1, node 0 rank 2.
    let v = tape.value(out).data();
    assert!((v[0] - 30.0).abs() < 1e-9 && (v[1] - 10.0).abs() < 1e-9 && (v[2] - 20.0).abs() < 1e-9);
}

proptest! {
    #[test]
    fn softsort_rows_are_stochastic(s in prop::collection::vec(-5.0f64..5.0, 1..12), tau in 0.01f64..10.0) {
        let n = s.len();
        let p = softsort(&s, tau).unwrap();
        for r in 0..n {
            let total: f64 = p[r * n..(r + 1) * n].iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(p[r * n..(r + 1) * n].iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn hard_permutation_is_equivariant(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = Rng::new(seed);
        let s: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let q = Permutation::random(n, &mut rng);
        let qs = q.apply_rows(&s, 1);
        let lhs = hard_perm_from_scores(&qs).unwrap();
        let rhs = hard_perm_from_scores(&s).unwrap().compose(&q.inverse());
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn low_temperature_approaches_hard(seed in any::<u64>(), n in 1usize..10) {
        let tau = 1e-3;
        let mut rng = Rng::new(seed);
        let mut s: Vec<f64> = (0..n).map(|i| i as f64 * 20.0 * tau + rng.uniform() * tau).collect();
        rng.shuffle(&mut s);
        let soft = softsort(&s, tau).unwrap();
        let hard = hard_perm_from_scores(&s).unwrap().matrix();
        let worst = soft.iter().zip(&hard).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-3, "{worst}");
    }
}
