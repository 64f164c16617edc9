use serde::Serialize;

use super::metrics::mean_stderr;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// L2-regularized multinomial logistic regression on standardized features.
#[derive(Clone, Debug)]
pub struct LogisticProbe {
    classes: usize,
    dim: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `(dim + 1) x classes`, bias row last.
    weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeOptions {
    pub l2: f64,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { l2: 1e-3, iterations: 1000, learning_rate: 0.5 }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

impl LogisticProbe {
    /// Full-batch gradient descent with Nesterov momentum.
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, opts: ProbeOptions) -> Result<Self> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return Err(Error::Eval(format!("{n} samples for {} labels", y.len())));
        }
        let dim = x[0].len();
        if x.iter().any(|r| r.len() != dim) || y.iter().any(|&c| c >= classes) {
            return Err(Error::Eval("ragged features or label out of range".into()));
        }
        let mean: Vec<f64> = (0..dim).map(|d| x.iter().map(|r| r[d]).sum::<f64>() / n as f64).collect();
        let scale: Vec<f64> = (0..dim)
            .map(|d| {
                let var = x.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n as f64;
                if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 }
            })
            .collect();
        let mut probe = Self { classes, dim, mean, scale, weights: vec![0.0; (dim + 1) * classes] };
        let xs: Vec<Vec<f64>> = x.iter().map(|r| probe.standardize(r)).collect();
        let mut velocity = vec![0.0; probe.weights.len()];
        let momentum = 0.9;
        for _ in 0..opts.iterations {
            let look: Vec<f64> = probe.weights.iter().zip(&velocity).map(|(w, v)| w + momentum * v).collect();
            let mut grad = vec![0.0; look.len()];
            for (row, &label) in xs.iter().zip(y) {
                let mut p = logits(&look, row, classes);
                softmax_in_place(&mut p);
                p[label] -= 1.0;
                for (d, &xv) in row.iter().chain(std::iter::once(&1.0)).enumerate() {
                    for c in 0..classes {
                        grad[d * classes + c] += xv * p[c] / n as f64;
                    }
                }
            }
            for (k, g) in grad.iter_mut().enumerate().take(dim * classes) {
                *g += opts.l2 * look[k];
            }
            for ((w, v), g) in probe.weights.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = momentum * *v - opts.learning_rate * g;
                *w += *v;
            }
        }
        Ok(probe)
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect()
    }

    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        assert_eq!(row.len(), self.dim);
        let mut p = logits(&self.weights, &self.standardize(row), self.classes);
        softmax_in_place(&mut p);
        p
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let p = self.predict_proba(row);
        (0..p.len()).fold(0, |best, c| if p[c] > p[best] { c } else { best })
    }
}

fn logits(w: &[f64], row: &[f64], classes: usize) -> Vec<f64> {
    let mut out = w[row.len() * classes..].to_vec();
    for (d, &xv) in row.iter().enumerate() {
        for c in 0..classes {
            out[c] += xv * w[d * classes + c];
        }
    }
    out
}

/// Cross-validated probe accuracy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub stderr: Option<f64>,
    pub fold_accuracy: Vec<f64>,
    pub classes: usize,
}

/// Stratified `folds`-fold cross-validation of [`LogisticProbe`].
pub fn probe_classification(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    folds: usize,
    seed: u64,
    opts: ProbeOptions,
) -> Result<ProbeResult> {
    if embeddings.len() != labels.len() {
        return Err(Error::Eval("one label per embedding required".into()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 || folds < 2 {
        return Err(Error::Eval(format!("need at least 2 classes and 2 folds, got {classes} and {folds}")));
    }
    let mut rng = Rng::new(seed);
    let mut fold_of = vec![0; labels.len()];
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng.shuffle(&mut members);
        for (k, &i) in members.iter().enumerate() {
            fold_of[i] = k % folds;
        }
    }
    let mut fold_accuracy = Vec::with_capacity(folds);
    for f in 0..folds {
        let (mut xtr, mut ytr, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..labels.len() {
            if fold_of[i] == f {
                test.push(i);
            } else {
                xtr.push(embeddings[i].clone());
                ytr.push(labels[i]);
            }
        }
        let mut seen = vec![false; classes];
        ytr.iter().for_each(|&c| seen[c] = true);
        if test.is_empty() || seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::Eval(format!("fold {f} is degenerate")));
        }
        let probe = LogisticProbe::fit(&xtr, &ytr, classes, opts)?;
        let correct = test.iter().filter(|&&i| probe.predict(&embeddings[i]) == labels[i]).count();
        fold_accuracy.push(correct as f64 / test.len() as f64);
    }
    let (accuracy, stderr) = mean_stderr(&fold_accuracy);
    Ok(ProbeResult { accuracy, stderr, fold_accuracy, classes })
}
