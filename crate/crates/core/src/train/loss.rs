use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::PaddedBatch;
use crate::model::{full_forward, Bound, Forward, LatentMode, ModelConfig, PermMode};
use crate::perm::entropy_penalty_tape;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Loss terms in nats per graph (batch means).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_edges: f64,
    pub recon_nodes: f64,
    pub kl: f64,
    pub perm_entropy: f64,
    pub count_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,recon_edges,recon_nodes,kl,perm_entropy,count_loss,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{},{}",
            self.recon_edges, self.recon_nodes, self.kl, self.perm_entropy, self.count_loss, self.total
        )
    }
}

/// Weights of the non-reconstruction terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
}

/// Target tensors derived from a padded batch.
fn targets<T: Scalar>(batch: &PaddedBatch<T>, d_v_out: usize) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>)> {
    if batch.has_embedding_slot() {
        return Err(Error::Config("loss targets need a batch without the embedding node".into()));
    }
    let (b, n, d_v) = (batch.batch_size(), batch.n_max(), batch.d_v());
    if d_v != d_v_out {
        return Err(Error::Config(format!("batch has {d_v} node channels, decoder predicts {d_v_out}")));
    }
    let ef = batch.edge_features().data();
    let d_e = batch.d_e();
    let x = batch.node_features().data();
    let mut edge_t = vec![T::zero(); b * n * n];
    let mut edge_w = vec![T::zero(); b * n * n];
    let mut node_t = vec![T::zero(); b * n * d_v];
    for (g, &s) in batch.sizes().iter().enumerate() {
        for i in 0..s {
            for j in i + 1..s {
                let o = (g * n + i) * n + j;
                edge_t[o] = ef[o * d_e];
                edge_w[o] = T::one();
            }
            let row = &x[(g * n + i) * d_v..(g * n + i + 1) * d_v];
            let best = (0..d_v).fold(0, |a, k| if row[k] > row[a] { k } else { a });
            node_t[(g * n + i) * d_v + best] = -T::one();
        }
    }
    Ok((
        Tensor::new(&[b, n, n], edge_t)?,
        Tensor::new(&[b, n, n], edge_w)?,
        Tensor::new(&[b, n, d_v], node_t)?,
        Tensor::scalar(T::from_usize_lossy(b)),
    ))
}

/// Batch means of the summed edge BCE over real pairs `i < j` and of the
/// summed node cross-entropy over real nodes.
pub fn reconstruction_loss<T: Scalar>(
    tape: &mut Tape<T>,
    edge_logits: Var,
    node_logits: Var,
    batch: &PaddedBatch<T>,
) -> Result<(Var, Var)> {
    let d_v_out = tape.shape(node_logits).last().copied().unwrap_or(0);
    let (edge_t, edge_w, node_t, count) = targets(batch, d_v_out)?;
    if tape.shape(edge_logits) != edge_t.shape() || tape.shape(node_logits) != node_t.shape() {
        return Err(crate::error::TensorError::ShapeMismatch {
            op: "reconstruction_loss",
            detail: format!("logits {:?}/{:?} for batch {:?}", tape.shape(edge_logits), tape.shape(node_logits), edge_t.shape()),
        }
        .into());
    }
    let b = count.item().expect("scalar");
    let bce = tape.bce_with_logits(edge_logits, &edge_t, &edge_w)?;
    let bce = tape.sum(bce)?;
    let edges = tape.div_scalar(bce, b)?;
    let lp = tape.log_softmax(node_logits)?;
    let ce = tape.sum_weighted(lp, &node_t)?;
    let nodes = tape.div_scalar(ce, b)?;
    Ok((edges, nodes))
}

/// Batch mean of `0.5 Σ (μ² + σ² − 1 − 2 log σ)`.
pub fn kl_loss<T: Scalar>(tape: &mut Tape<T>, mu: Var, sigma: Var, log_sigma: Var) -> Result<Var> {
    let b = tape.shape(mu)[0];
    let numel: usize = tape.shape(mu).iter().product();
    let mu2 = tape.mul(mu, mu)?;
    let s2 = tape.mul(sigma, sigma)?;
    let t = tape.add(mu2, s2)?;
    let ls = tape.mul_scalar(log_sigma, T::from_f64_lossy(2.0))?;
    let t = tape.sub(t, ls)?;
    let t = tape.sum(t)?;
    let t = tape.add_scalar(t, -T::from_usize_lossy(numel))?;
    Ok(tape.mul_scalar(t, T::from_f64_lossy(0.5 / b as f64))?)
}

/// Closed-form KL of `N(μ, diag σ²)` from the standard normal.
pub fn kl_divergence(mu: &[f64], sigma: &[f64]) -> f64 {
    0.5 * mu.iter().zip(sigma).map(|(m, s)| m * m + s * s - 1.0 - (s * s).ln()).sum::<f64>()
}

/// Batch-mean cross-entropy of the node-count head.
pub fn count_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, sizes: &[usize], cfg: &ModelConfig) -> Result<Var> {
    let c = cfg.count_classes();
    let mut onehot = vec![T::zero(); sizes.len() * c];
    for (g, &s) in sizes.iter().enumerate() {
        if s < cfg.n_min || s > cfg.n_max {
            return Err(Error::Config(format!("node count {s} outside [{}, {}]", cfg.n_min, cfg.n_max)));
        }
        onehot[g * c + s - cfg.n_min] = -T::one();
    }
    let lp = tape.log_softmax(logits)?;
    let ce = tape.sum_weighted(lp, &Tensor::new(&[sizes.len(), c], onehot)?)?;
    Ok(tape.div_scalar(ce, T::from_usize_lossy(sizes.len()))?)
}

/// Tape variables of every loss term.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub recon_edges: Var,
    pub recon_nodes: Var,
    pub kl: Var,
    pub perm_entropy: Var,
    pub count_loss: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> LossBreakdown {
        let v = |x: Var| tape.value(x).data()[0].to_f64_lossy();
        LossBreakdown {
            recon_edges: v(self.recon_edges),
            recon_nodes: v(self.recon_nodes),
            kl: v(self.kl),
            perm_entropy: v(self.perm_entropy),
            count_loss: v(self.count_loss),
            total: v(self.total),
        }
    }
}

/// Forward pass plus every loss term.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    batch: &PaddedBatch<T>,
    weights: LossWeights,
    latent: LatentMode,
    perm_mode: PermMode,
) -> Result<(Forward, LossVars)> {
    let f = full_forward(tape, p, cfg, batch, latent, perm_mode)?;
    let (recon_edges, recon_nodes) = reconstruction_loss(tape, f.decoded.edge_logits, f.decoded.node_logits, batch)?;
    let kl = kl_loss(tape, f.encoded.mu, f.encoded.sigma, f.encoded.log_sigma)?;
    let perm_entropy = entropy_penalty_tape(tape, f.perm, batch.sizes())?;
    let count = count_loss(tape, f.count_logits, batch.sizes(), cfg)?;
    let mut total = tape.add(recon_edges, recon_nodes)?;
    for (term, w) in [(kl, weights.beta), (perm_entropy, weights.lambda), (count, weights.gamma)] {
        let t = tape.mul_scalar(term, T::from_f64_lossy(w))?;
        total = tape.add(total, t)?;
    }
    Ok((f, LossVars { recon_edges, recon_nodes, kl, perm_entropy, count_loss: count, total }))
}
