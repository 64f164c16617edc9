//! Architectural property suites that need no trained weights.

use serde::Serialize;

use super::{equivariance_audit, invariance_audit};
use crate::autodiff::gradcheck::{check_registered_ops, directional_check};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result, TensorError};
use crate::graph::{gen_graph, pad_batch, EdgeFeatures, Family, Graph, Permutation};
use crate::model::{LatentMode, Model, ModelConfig, ModelParams, PermMode};
use crate::perm::{entropy_penalty, hard_perm_from_scores, is_permutation, softsort};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{total_loss, LossWeights};

/// One row of a property table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    /// The measured statistic compared against the threshold.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl PropertyResult {
    fn below(name: &str, value: f64, threshold: f64, detail: String) -> Self {
        Self { name: name.into(), passed: value < threshold, value, threshold, detail }
    }

    fn above(name: &str, value: f64, threshold: f64, detail: String) -> Self {
        Self { name: name.into(), passed: value > threshold, value, threshold, detail }
    }
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in all_permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Alternating row/column normalization of a positive matrix.
pub fn sinkhorn(m: &mut [f64], n: usize, iterations: usize) {
    for _ in 0..iterations {
        for row in m.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        for c in 0..n {
            let s: f64 = (0..n).map(|r| m[r * n + c]).sum();
            (0..n).for_each(|r| m[r * n + c] /= s);
        }
    }
}

/// Every permutation matrix with `n ≤ 4` has zero penalty; Sinkhorn-normalized
/// random matrices do not.
pub fn entropy_characterization(seed: u64) -> Result<Vec<PropertyResult>> {
    let (mut worst, mut rejected, mut count) = (0.0f64, 0, 0);
    for n in 1..=4 {
        for m in all_permutations(n) {
            let p = Permutation::new(m)?.matrix();
            worst = worst.max(entropy_penalty(&p, n, n)?);
            rejected += usize::from(!is_permutation(&p, n, n, 1e-9)?);
            count += 1;
        }
    }
    let mut perms = PropertyResult::below(
        "entropy.permutations",
        worst,
        1e-9,
        format!("{count} matrices, {rejected} rejected by is_permutation"),
    );
    perms.passed &= rejected == 0;
    let mut rng = Rng::new(seed);
    let (mut least, mut accepted) = (f64::INFINITY, 0);
    for trial in 0..1000 {
        let n = 2 + trial % 5;
        let mut m: Vec<f64> = (0..n * n).map(|_| rng.uniform() + 1e-3).collect();
        sinkhorn(&mut m, n, 500);
        least = least.min(entropy_penalty(&m, n, n)?);
        accepted += usize::from(is_permutation(&m, n, n, 1e-6)?);
    }
    let mut ds = PropertyResult::above(
        "entropy.doubly_stochastic",
        least,
        1e-3,
        format!("1000 Sinkhorn matrices, {accepted} accepted by is_permutation"),
    );
    ds.passed &= accepted == 0;
    Ok(vec![perms, ds])
}

/// Row sums, the low-temperature limit and the two-element worked example.
pub fn softsort_properties(seed: u64) -> Result<Vec<PropertyResult>> {
    let mut rng = Rng::new(seed);
    let mut row_err = 0.0f64;
    for k in 0..1000 {
        let n = 1 + k % 12;
        let s: Vec<f64> = (0..n).map(|_| 3.0 * rng.normal()).collect();
        let p = softsort(&s, 0.05 + rng.uniform() * 2.0)?;
        for row in p.chunks(n) {
            row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let tau = 1e-3;
    let mut limit_err = 0.0f64;
    for k in 0..1000 {
        let n = 2 + k % 10;
        // Gaps of at least 11τ.
        let mut s = vec![0.0];
        for _ in 1..n {
            let last = *s.last().expect("nonempty");
            s.push(last + tau * (11.0 + 5.0 * rng.uniform()));
        }
        rng.shuffle(&mut s);
        let p = softsort(&s, tau)?;
        let hard = hard_perm_from_scores(&s)?.matrix();
        limit_err = p.iter().zip(&hard).map(|(a, b)| (a - b).abs()).fold(limit_err, f64::max);
    }
    let example = softsort(&[2.0, 1.0], 1.0)?;
    let expected = [0.7311f64, 0.2689, 0.2689, 0.7311];
    let example_err = example.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(vec![
        PropertyResult::below("softsort.row_sums", row_err, 1e-6, "1000 random score vectors".into()),
        PropertyResult::below("softsort.limit", limit_err, 1e-3, format!("1000 vectors, gaps > 10τ, τ={tau}")),
        PropertyResult::below(
            "softsort.worked_example",
            example_err,
            1e-4,
            format!("softsort([2,1], τ=1) = {example:.4?}"),
        ),
    ])
}

/// Central finite differences on every registered tape op.
pub fn gradient_ops(seed: u64) -> Result<PropertyResult> {
    let report = check_registered_ops(3, seed, 1e-6)?;
    let (name, worst) = report.iter().fold(("", 0.0f64), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    Ok(PropertyResult::below(
        "gradients.ops",
        worst,
        1e-4,
        format!("{} ops, worst `{name}`", report.len()),
    ))
}

fn as_tensor_error(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::InvalidArgument { op: "forward", detail: other.to_string() },
    }
}

/// Directional finite-difference check of the full training loss on a 5-node graph.
pub fn gradient_end_to_end(seed: u64) -> Result<PropertyResult> {
    let cfg = ModelConfig { d_m: 8, d_z: 4, heads: 2, l_enc: 1, l_dec: 1, n_max: 6, tau: 0.7, ..ModelConfig::default() };
    let params = ModelParams::<f64>::init(&cfg, seed)?;
    let graph = gen_graph(&Family::ErdosRenyi { p: 0.5 }, 5, seed)?;
    let batch = pad_batch::<f64>(&[graph], false, EdgeFeatures::default())?;
    let mut rng = Rng::new(seed ^ 0xb1a5);
    // Biases start at zero; nonzero values exercise every path.
    let points: Vec<(String, Tensor<f64>)> = params
        .iter()
        .map(|(name, t)| {
            let t = if t.shape().len() == 1 && t.data().iter().all(|&v| v == 0.0) {
                let data = (0..t.numel()).map(|_| 0.1 * rng.normal()).collect();
                Tensor::new(t.shape(), data).expect("same shape")
            } else {
                t.clone()
            };
            (name.to_string(), t)
        })
        .collect();
    let names: Vec<String> = points.iter().map(|(n, _)| n.clone()).collect();
    let weights = LossWeights { beta: 0.5, lambda: 0.1, gamma: 1.0 };
    let report = directional_check(
        |tape: &mut Tape<f64>, vars: &[Var]| {
            let p = crate::model::Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()));
            let (_, losses) = total_loss(tape, &p, &cfg, &batch, weights, LatentMode::Sample(seed), PermMode::Soft)
                .map_err(as_tensor_error)?;
            Ok(losses.total)
        },
        &points,
        1e-6,
    )?;
    let (name, worst) =
        report.iter().fold((String::new(), 0.0f64), |acc, (n, e)| if *e > acc.1 { (n.clone(), *e) } else { acc });
    Ok(PropertyResult::below(
        "gradients.end_to_end",
        worst,
        1e-3,
        format!("{} parameter tensors, worst `{name}`", report.len()),
    ))
}

fn random_graphs(count: usize, n_min: usize, n_max: usize, seed: u64) -> Result<Vec<Graph>> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let n = rng.range_inclusive(n_min, n_max);
            Ok(gen_graph(&Family::ErdosRenyi { p: 0.5 }, n, rng.next_u64())?)
        })
        .collect()
}

/// `μ` is unchanged by relabeling: 100 graphs × 5 permutations at 32-bit.
pub fn encoder_invariance(cfg: &ModelConfig, seed: u64) -> Result<PropertyResult> {
    let model = Model::new(ModelParams::<f32>::init(cfg, seed)?);
    let graphs = random_graphs(100, cfg.n_min.max(2), cfg.n_max, seed)?;
    let dev = invariance_audit(&model, &graphs, 5, seed)?;
    Ok(PropertyResult::below("encoder.invariance", dev, 1e-5, "100 graphs x 5 permutations, f32".into()))
}

/// `hard_P(QG) == hard_P(G)·Qᵀ` on 100 tie-free cases.
pub fn permuter_equivariance(cfg: &ModelConfig, seed: u64) -> Result<PropertyResult> {
    let model = Model::new(ModelParams::<f32>::init(cfg, seed)?);
    let mut rng = Rng::new(seed);
    let (mut tie_free, mut passed, mut tied) = (0, 0, 0);
    while tie_free < 100 {
        if tied > 1000 {
            return Err(Error::Eval("too many tied score vectors".into()));
        }
        let graphs = random_graphs(100 - tie_free, cfg.n_min.max(2), cfg.n_max, rng.next_u64())?;
        let r = equivariance_audit(&model, &graphs, rng.next_u64())?;
        tie_free += r.tie_free();
        passed += r.passed;
        tied += r.tied;
    }
    Ok(PropertyResult {
        name: "permuter.equivariance".into(),
        passed: passed == tie_free,
        value: passed as f64 / tie_free as f64,
        threshold: 1.0,
        detail: format!("{passed}/{tie_free} tie-free cases, {tied} tied cases skipped"),
    })
}

/// Decoding with `perm·Qᵀ` relabels the output by `Q`.
pub fn decoder_equivariance(cfg: &ModelConfig, seed: u64) -> Result<PropertyResult> {
    let model = Model::new(ModelParams::<f32>::init(cfg, seed)?);
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.range_inclusive(cfg.n_min.max(2), cfg.n_max);
        let z: Vec<f64> = (0..cfg.d_z).map(|_| rng.normal()).collect();
        let p = Permutation::random(n, &mut rng);
        let q = Permutation::random(n, &mut rng);
        let (nodes, edges) = model.decode(&z, &p, n)?;
        let (nodes_q, edges_q) = model.decode(&z, &p.compose(&q.inverse()), n)?;
        let d_v = nodes.len() / n;
        let nodes = q.apply_rows(&nodes, d_v);
        let m = q.mapping();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    worst = worst.max((edges_q[i * n + j] - edges[m[i] * n + m[j]]).abs());
                }
            }
        }
        worst = nodes.iter().zip(&nodes_q).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok(PropertyResult::below("decoder.equivariance", worst, 1e-5, "20 random (z, P, Q), f32".into()))
}

/// Every property; gradient checks only when `precision` is 64.
pub fn run_all(precision: u32, seed: u64) -> Result<Vec<PropertyResult>> {
    let cfg = ModelConfig { n_max: 20, ..ModelConfig::default() };
    let mut out = entropy_characterization(seed)?;
    out.extend(softsort_properties(seed)?);
    if precision == 64 {
        out.push(gradient_ops(seed)?);
        out.push(gradient_end_to_end(seed)?);
    }
    out.push(encoder_invariance(&cfg, seed)?);
    out.push(permuter_equivariance(&cfg, seed)?);
    out.push(decoder_equivariance(&cfg, seed)?);
    Ok(out)
}
