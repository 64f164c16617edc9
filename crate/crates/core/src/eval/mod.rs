//! Reconstruction metrics, invariance audits and the synthetic-graph experiments.
//!
//! Every experiment encodes with `z = μ` and reads latent distances as
//! Euclidean distances between means.

mod metrics;
mod probe;
pub mod properties;
pub mod svg;

pub use metrics::{bernoulli_nll, edge_roc_auc, euclidean, mean_stderr, pearson, ranks, spearman};
pub use probe::{probe_classification, LogisticProbe, ProbeOptions, ProbeResult};

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{edit_sequence, permute_graph, Graph, Permutation};
use crate::model::Model;
use crate::perm::{argsort_desc, entropy_penalty, hard_perm_from_scores, softsort};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// A reported number with its standard error when replicated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metric {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

impl Metric {
    pub fn single(value: f64) -> Self {
        Self { value, stderr: None }
    }

    pub fn from_replicates(values: &[f64]) -> Self {
        let (value, stderr) = mean_stderr(values);
        Self { value, stderr }
    }
}

/// Named metrics of one experiment plus the parameters and seeds that produced them.
#[derive(Clone, Debug, Default, Serialize)]
pub struct EvalReport {
    pub experiment: String,
    pub metrics: BTreeMap<String, Metric>,
    pub parameters: serde_json::Value,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
}

impl EvalReport {
    pub fn new(experiment: &str, parameters: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self { experiment: experiment.into(), parameters, seeds, ..Self::default() }
    }

    pub fn insert(&mut self, name: &str, metric: Metric) {
        self.metrics.insert(name.into(), metric);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Deterministic reconstruction quality over a graph set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructionMetrics {
    /// Pooled ROC-AUC over all real pairs `i < j`; absent for single-class targets.
    pub roc_auc: Option<f64>,
    /// Mean per-graph summed edge NLL in nats.
    pub nll: f64,
    /// NLL of the all-zero-logit model: `ln 2` per pair.
    pub baseline_nll: f64,
    /// Fraction of pairs classified correctly at probability 0.5.
    pub edge_accuracy: f64,
    /// Fraction of graphs whose thresholded reconstruction equals the input.
    pub exact_fraction: f64,
    /// Mean entropy penalty of the SoftSort matrices.
    pub perm_entropy: f64,
    /// Fraction of graphs whose SoftSort rows, discretized by argmax, form a permutation.
    pub valid_permutation_fraction: f64,
    /// Fraction of graphs whose node count the count head predicts exactly.
    pub count_accuracy: f64,
}

pub fn reconstruction_metrics<T: Scalar>(model: &Model<T>, graphs: &[Graph]) -> Result<ReconstructionMetrics> {
    if graphs.is_empty() {
        return Err(Error::Eval("no graphs to evaluate".into()));
    }
    let recs = model.reconstruct(graphs)?;
    let tau = model.config().tau;
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    let (mut nll, mut base, mut correct, mut exact, mut ent, mut valid, mut counted) = (0.0, 0.0, 0, 0, 0.0, 0, 0);
    for (g, r) in graphs.iter().zip(&recs) {
        let n = g.n();
        for i in 0..n {
            for j in i + 1..n {
                let y = g.has_edge(i, j);
                let logit = r.edge_logits[i * n + j];
                scores.push(logit);
                labels.push(y);
                nll += bernoulli_nll(logit, y);
                base += std::f64::consts::LN_2;
                correct += usize::from((logit > 0.0) == y);
            }
        }
        exact += usize::from(r.graph().adjacency() == g.adjacency());
        let p = softsort(&r.scores, tau)?;
        ent += entropy_penalty(&p, n, n)?;
        let argmax: Vec<usize> = p.chunks(n).map(|row| argsort_desc(row)[0]).collect();
        valid += usize::from(Permutation::new(argmax).is_ok());
        let best = (0..r.count_probs.len()).fold(0, |b, c| if r.count_probs[c] > r.count_probs[b] { c } else { b });
        counted += usize::from(best + model.config().n_min == n);
    }
    let count = graphs.len() as f64;
    Ok(ReconstructionMetrics {
        roc_auc: edge_roc_auc(&scores, &labels),
        nll: nll / count,
        baseline_nll: base / count,
        edge_accuracy: if labels.is_empty() { 1.0 } else { correct as f64 / labels.len() as f64 },
        exact_fraction: exact as f64 / count,
        perm_entropy: ent / count,
        valid_permutation_fraction: valid as f64 / count,
        count_accuracy: counted as f64 / count,
    })
}

/// Mean per-graph summed edge NLL under the deterministic forward pass.
pub fn nll_estimate<T: Scalar>(model: &Model<T>, graphs: &[Graph]) -> Result<f64> {
    Ok(reconstruction_metrics(model, graphs)?.nll)
}

fn mus<T: Scalar>(model: &Model<T>, graphs: &[Graph]) -> Result<Vec<Vec<f64>>> {
    Ok(model.encode(graphs)?.into_iter().map(|c| c.mu).collect())
}

/// Largest ∞-norm change of `μ` over `k` random relabelings of every graph.
pub fn invariance_audit<T: Scalar>(model: &Model<T>, graphs: &[Graph], k: usize, seed: u64) -> Result<f64> {
    let base = mus(model, graphs)?;
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..k {
        let permuted: Vec<Graph> = graphs
            .iter()
            .map(|g| permute_graph(g, &Permutation::random(g.n(), &mut rng)))
            .collect::<std::result::Result<_, _>>()?;
        for (a, b) in base.iter().zip(mus(model, &permuted)?) {
            worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
        }
    }
    Ok(worst)
}

/// Outcome of the hard-permutation equivariance check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivarianceReport {
    pub cases: usize,
    pub passed: usize,
    /// Cases with two scores tied under [`TIE_TOLERANCE`]; excluded from the pass fraction.
    pub tied: usize,
}

impl EquivarianceReport {
    pub fn tie_free(&self) -> usize {
        self.cases - self.tied
    }

    /// Passing fraction of the tie-free cases.
    pub fn pass_fraction(&self) -> f64 {
        if self.tie_free() == 0 {
            1.0
        } else {
            self.passed as f64 / self.tie_free() as f64
        }
    }
}

/// Score gap, relative to `max(1, max |s|)`, below which two nodes count as tied.
///
/// Relabeling reorders floating-point sums, so automorphic nodes get scores that
/// differ by round-off rather than being exactly equal.
pub const TIE_TOLERANCE: f64 = 1e-5;

/// Whether two scores lie within `tol · max(1, max |s|)` of each other.
pub fn has_ties(scores: &[f64], tol: f64) -> bool {
    let scale = scores.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).any(|w| w[1] - w[0] <= tol * scale)
}

/// Checks `hard_P(QG) == hard_P(G)·Qᵀ` for one random `Q` per graph.
pub fn equivariance_audit<T: Scalar>(model: &Model<T>, graphs: &[Graph], seed: u64) -> Result<EquivarianceReport> {
    let mut rng = Rng::new(seed);
    let qs: Vec<Permutation> = graphs.iter().map(|g| Permutation::random(g.n(), &mut rng)).collect();
    let permuted: Vec<Graph> =
        graphs.iter().zip(&qs).map(|(g, q)| permute_graph(g, q)).collect::<std::result::Result<_, _>>()?;
    let s = model.scores(graphs)?;
    let sq = model.scores(&permuted)?;
    let mut report = EquivarianceReport { cases: graphs.len(), passed: 0, tied: 0 };
    for ((a, b), q) in s.iter().zip(&sq).zip(&qs) {
        if has_ties(a, TIE_TOLERANCE) || has_ties(b, TIE_TOLERANCE) {
            report.tied += 1;
            continue;
        }
        let p = hard_perm_from_scores(a)?;
        let pq = hard_perm_from_scores(b)?;
        report.passed += usize::from(pq == p.compose(&q.inverse()));
    }
    Ok(report)
}

/// Mean latent distance per edit step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GedCurve {
    /// Edit steps `0..=max_edits`.
    pub steps: Vec<usize>,
    pub mean_distance: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Largest distance between a graph and a relabeled copy.
    pub control_max: f64,
    /// Spearman correlation over steps `1..=max_edits`.
    pub spearman: Option<f64>,
    pub base_graphs: usize,
    pub skipped: usize,
}

/// Distances from each base graph to `replicates` edit sequences of length `max_edits`.
///
/// Graphs with fewer than `max_edits` edges or non-edges are skipped.
pub fn ged_curve<T: Scalar>(
    model: &Model<T>,
    base: &[Graph],
    max_edits: usize,
    replicates: usize,
    seed: u64,
) -> Result<GedCurve> {
    let mut rng = Rng::new(seed);
    let mut per_step: Vec<Vec<f64>> = vec![Vec::new(); max_edits + 1];
    let (mut control_max, mut used, mut skipped) = (0.0f64, 0, 0);
    for g in base {
        if g.edge_count().min(g.n() * (g.n() - 1) / 2 - g.edge_count()) < max_edits {
            skipped += 1;
            continue;
        }
        used += 1;
        let mut batch = vec![g.clone(), permute_graph(g, &Permutation::random(g.n(), &mut rng))?];
        for _ in 0..replicates {
            batch.extend(edit_sequence(g, max_edits, rng.next_u64())?);
        }
        let z = mus(model, &batch)?;
        per_step[0].push(0.0);
        control_max = control_max.max(euclidean(&z[0], &z[1]));
        for (k, zk) in z[2..].iter().enumerate() {
            per_step[k % max_edits + 1].push(euclidean(&z[0], zk));
        }
    }
    if used == 0 {
        return Err(Error::Eval(format!("no base graph admits {max_edits} edits")));
    }
    let stats: Vec<(f64, Option<f64>)> = per_step.iter().map(|d| mean_stderr(d)).collect();
    let steps: Vec<usize> = (0..=max_edits).collect();
    let mean_distance: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let xs: Vec<f64> = steps[1..].iter().map(|&s| s as f64).collect();
    Ok(GedCurve {
        spearman: if max_edits >= 2 { spearman(&xs, &mean_distance[1..]) } else { None },
        stderr: stats.iter().map(|s| s.1.unwrap_or(0.0)).collect(),
        steps,
        mean_distance,
        control_max,
        base_graphs: used,
        skipped,
    })
}

/// Relabeled-copy versus one-substitution distances.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsomorphismReport {
    pub pairs: usize,
    pub max_isomorphic_distance: f64,
    pub min_edit_distance: f64,
    /// Fraction of graphs whose edited copy is farther than the relabeled copy.
    pub separation_rate: f64,
    /// Fraction of isomorphic pairs below 1e-5.
    pub isomorphic_match_rate: f64,
    /// Pairs where both graphs reconstruct exactly and the embeddings coincide.
    pub verified_isomorphic: usize,
}

pub const ISOMORPHIC_TOLERANCE: f64 = 1e-5;

pub fn isomorphism_test<T: Scalar>(model: &Model<T>, graphs: &[Graph], seed: u64) -> Result<IsomorphismReport> {
    let mut rng = Rng::new(seed);
    let mut copies = Vec::with_capacity(graphs.len());
    let mut edits = Vec::with_capacity(graphs.len());
    for g in graphs {
        copies.push(permute_graph(g, &Permutation::random(g.n(), &mut rng))?);
        let mut e = edit_sequence(g, 1, rng.next_u64())?;
        edits.push(e.pop().expect("one edit"));
    }
    let z = mus(model, graphs)?;
    let zc = mus(model, &copies)?;
    let ze = mus(model, &edits)?;
    let recon = model.reconstruct(graphs)?;
    let recon_c = model.reconstruct(&copies)?;
    let mut report = IsomorphismReport {
        pairs: graphs.len(),
        max_isomorphic_distance: 0.0,
        min_edit_distance: f64::INFINITY,
        separation_rate: 0.0,
        isomorphic_match_rate: 0.0,
        verified_isomorphic: 0,
    };
    let (mut separated, mut matched) = (0, 0);
    for k in 0..graphs.len() {
        let di = euclidean(&z[k], &zc[k]);
        let de = euclidean(&z[k], &ze[k]);
        report.max_isomorphic_distance = report.max_isomorphic_distance.max(di);
        report.min_edit_distance = report.min_edit_distance.min(de);
        separated += usize::from(de > di);
        matched += usize::from(di < ISOMORPHIC_TOLERANCE);
        let exact = |r: &crate::model::Reconstruction, g: &Graph| r.graph().adjacency() == g.adjacency();
        if di < ISOMORPHIC_TOLERANCE && exact(&recon[k], &graphs[k]) && exact(&recon_c[k], &copies[k]) {
            report.verified_isomorphic += 1;
        }
    }
    let n = graphs.len().max(1) as f64;
    report.separation_rate = separated as f64 / n;
    report.isomorphic_match_rate = matched as f64 / n;
    Ok(report)
}

/// Graph decoded from `z` in the canonical order: count-head argmax, identity permutation,
/// edges at probability above 0.5.
pub fn decode_canonical<T: Scalar>(model: &Model<T>, z: &[f64]) -> Result<Graph> {
    let n = model.predict_count(z)?;
    let (_, logits) = model.decode(z, &Permutation::identity(n), n)?;
    let mut g = Graph::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if logits[i * n + j] > 0.0 {
                g.set_edge(i, j, true);
            }
        }
    }
    Ok(g)
}

/// Canonical decodes along `z_α = (1 − α) μ₁ + α μ₂`, `α = 0, 1/(steps−1), …, 1`.
pub fn interpolate<T: Scalar>(model: &Model<T>, start: &Graph, end: &Graph, steps: usize) -> Result<Vec<Graph>> {
    if steps < 2 {
        return Err(Error::Eval(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    let z = mus(model, &[start.clone(), end.clone()])?;
    (0..steps)
        .map(|s| {
            let a = s as f64 / (steps - 1) as f64;
            let za: Vec<f64> = z[0].iter().zip(&z[1]).map(|(x, y)| (1.0 - a) * x + a * y).collect();
            decode_canonical(model, &za)
        })
        .collect()
}

/// Whether the canonical decode of `μ(g)` is the model's own reconstruction of `g`
/// once relabeled by the permuter.
pub fn endpoint_matches<T: Scalar>(model: &Model<T>, g: &Graph, canonical: &Graph) -> Result<bool> {
    let r = &model.reconstruct(std::slice::from_ref(g))?[0];
    if canonical.n() != g.n() {
        return Ok(false);
    }
    let aligned = permute_graph(canonical, &r.perm.inverse())?;
    Ok(aligned.adjacency() == r.graph().adjacency())
}

/// Endpoint consistency over interpolation pairs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterpolationReport {
    pub pairs: usize,
    /// Pairs whose two endpoints both match their reconstructions.
    pub consistent: usize,
    pub start_matches: usize,
    pub end_matches: usize,
}

impl InterpolationReport {
    pub fn consistency(&self) -> f64 {
        self.consistent as f64 / self.pairs.max(1) as f64
    }
}

/// Interpolates every pair and checks both endpoints; returns the decoded sequences too.
pub fn interpolation_experiment<T: Scalar>(
    model: &Model<T>,
    pairs: &[(Graph, Graph)],
    steps: usize,
) -> Result<(InterpolationReport, Vec<Vec<Graph>>)> {
    let mut report = InterpolationReport { pairs: pairs.len(), consistent: 0, start_matches: 0, end_matches: 0 };
    let mut sequences = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let seq = interpolate(model, a, b, steps)?;
        let s = endpoint_matches(model, a, &seq[0])?;
        let e = endpoint_matches(model, b, &seq[steps - 1])?;
        report.start_matches += usize::from(s);
        report.end_matches += usize::from(e);
        report.consistent += usize::from(s && e);
        sequences.push(seq);
    }
    Ok((report, sequences))
}

/// Writes `id,family,params,z0,…` rows of the mean embeddings.
pub fn export_embeddings<T: Scalar>(model: &Model<T>, graphs: &[Graph], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let z = mus(model, graphs)?;
    let csv_err = |e: csv::Error| Error::Eval(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["id".to_string(), "family".into(), "params".into()];
    header.extend((0..model.config().d_z).map(|k| format!("z{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for (id, (g, zi)) in graphs.iter().zip(&z).enumerate() {
        let mut row = vec![
            id.to_string(),
            g.family().map_or(String::new(), |f| f.name().to_string()),
            g.family().map_or(String::new(), |f| f.params_json().to_string()),
        ];
        row.extend(zi.iter().map(|v| format!("{v:e}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
