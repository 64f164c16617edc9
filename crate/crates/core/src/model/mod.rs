//! Encoder, permuter, decoder and node-count head.
//!
//! Graphs are represented by directed messages `m_ij` stored as
//! `[B, N, N, d_m]` tensors. Every stack is a sequence of pre-norm blocks
//! in which a message `m_ij` attends over the messages `m_ki` entering its
//! source node.

mod checkpoint;
mod config;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use params::{Bound, ModelParams};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, GraphError, Result};
use crate::graph::{pad_batch, Graph, PaddedBatch, Permutation};
use crate::perm::{assign_rows_tape, hard_perm_from_scores, softsort_tape};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

/// Nonlinearity of the message projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Test hook: leaves the affine map unchanged.
    Identity,
}

/// How the latent code becomes `z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentMode {
    /// `z = μ + σ ⊙ ε` with `ε` drawn from the given seed.
    Sample(u64),
    /// `z = μ`.
    Mean,
}

/// Which permutation aligns the decoder with the input order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PermMode {
    /// SoftSort relaxation at the configured temperature.
    Soft,
    /// Hard argsort of the permuter scores.
    Hard,
}

/// Inserts the embedding node at index 0 of every graph.
///
/// The node features gain a trailing type channel that is hot only for the
/// embedding node; the edge features gain a trailing channel that is hot on
/// the pairs `(0, j)` and `(j, 0)` for every real node `j`.
pub fn add_embedding_node<T: Scalar>(batch: &PaddedBatch<T>) -> Result<PaddedBatch<T>> {
    if batch.has_embedding_slot() {
        return Err(GraphError::Malformed("batch already has an embedding node".into()).into());
    }
    let (b, n, d_v, d_e) = (batch.batch_size(), batch.n_max(), batch.d_v(), batch.d_e());
    let (n1, dv1, de1) = (n + 1, d_v + 1, d_e + 1);
    let x = batch.node_features().data();
    let e = batch.edge_features().data();
    let mut nx = vec![T::zero(); b * n1 * dv1];
    let mut ne = vec![T::zero(); b * n1 * n1 * de1];
    for (g, &size) in batch.sizes().iter().enumerate() {
        nx[(g * n1) * dv1 + d_v] = T::one();
        for i in 0..n {
            let src = (g * n + i) * d_v;
            let dst = (g * n1 + i + 1) * dv1;
            nx[dst..dst + d_v].copy_from_slice(&x[src..src + d_v]);
        }
        for i in 0..n {
            for j in 0..n {
                let src = ((g * n + i) * n + j) * d_e;
                let dst = ((g * n1 + i + 1) * n1 + j + 1) * de1;
                ne[dst..dst + d_e].copy_from_slice(&e[src..src + d_e]);
            }
        }
        for j in 1..=size {
            ne[((g * n1) * n1 + j) * de1 + d_e] = T::one();
            ne[((g * n1 + j) * n1) * de1 + d_e] = T::one();
        }
    }
    Ok(PaddedBatch::from_parts(
        Tensor::new(&[b, n1, dv1], nx)?,
        Tensor::new(&[b, n1, n1, de1], ne)?,
        batch.sizes().to_vec(),
        true,
        batch.families().to_vec(),
    ))
}

/// `m_ij = σ([x_i ‖ x_j ‖ e_ij] W + b)` for `x: [B, N, d_v]`, `e: [B, N, N, d_e]`.
pub fn build_message_matrix<T: Scalar>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    e: &Tensor<T>,
    w: Var,
    b: Var,
    activation: Activation,
) -> Result<Var> {
    let (bs, n, d_v) = match *x.shape() {
        [bs, n, d_v] => (bs, n, d_v),
        _ => return Err(shape_err("message", format!("node features {:?}", x.shape()))),
    };
    let d_e = match *e.shape() {
        [b2, n2, n3, d_e] if b2 == bs && n2 == n && n3 == n => d_e,
        _ => return Err(shape_err("message", format!("edge features {:?} for nodes {:?}", e.shape(), x.shape()))),
    };
    let d_in = 2 * d_v + d_e;
    let mut cat = Vec::with_capacity(bs * n * n * d_in);
    let (xd, ed) = (x.data(), e.data());
    for g in 0..bs {
        for i in 0..n {
            for j in 0..n {
                cat.extend_from_slice(&xd[(g * n + i) * d_v..(g * n + i + 1) * d_v]);
                cat.extend_from_slice(&xd[(g * n + j) * d_v..(g * n + j + 1) * d_v]);
                let o = ((g * n + i) * n + j) * d_e;
                cat.extend_from_slice(&ed[o..o + d_e]);
            }
        }
    }
    let input = tape.constant(Tensor::new(&[bs, n, n, d_in], cat)?);
    let m = tape.linear(input, w, b)?;
    Ok(match activation {
        Activation::Relu => tape.relu(m)?,
        Activation::Identity => m,
    })
}

fn shape_err(op: &'static str, detail: String) -> Error {
    crate::error::TensorError::ShapeMismatch { op, detail }.into()
}

/// Softmax mask `[B, N, H, N, N]` letting every target attend to the valid source nodes `k`.
pub fn attention_mask(node_mask: &[bool], batch: usize, n: usize, heads: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(batch * n * heads * n * n);
    for g in 0..batch {
        let row = &node_mask[g * n..(g + 1) * n];
        for _ in 0..n * heads * n {
            out.extend_from_slice(row);
        }
    }
    out
}

/// Restricted multi-head attention: `m_ij` queries the messages `m_ki`.
///
/// `prefix` names the `q`, `k`, `v`, `o` projections. `mask` comes from
/// [`attention_mask`]; `None` attends over every node.
pub fn attention<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    prefix: &str,
    m: Var,
    heads: usize,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let (b, n, d) = match *tape.shape(m) {
        [b, n, n2, d] if n == n2 && d % heads == 0 => (b, n, d),
        ref s => return Err(shape_err("attention", format!("messages {s:?} with {heads} heads"))),
    };
    let dh = d / heads;
    let proj = |tape: &mut Tape<T>, name: &str| -> Result<Var> {
        let y = tape.linear(m, p.var(&format!("{prefix}.{name}.w")), p.var(&format!("{prefix}.{name}.b")))?;
        Ok(tape.reshape(y, &[b, n, n, heads, dh])?)
    };
    // q[b, i, j] belongs to target m_ij; k[b, k, i] and v[b, k, i] to source m_ki.
    let q = proj(tape, "q")?;
    let q = tape.permute(q, &[0, 1, 3, 2, 4])?;
    let k = proj(tape, "k")?;
    let k = tape.permute(k, &[0, 2, 3, 1, 4])?;
    let v = proj(tape, "v")?;
    let v = tape.permute(v, &[0, 2, 3, 1, 4])?;
    let s = tape.matmul_t(q, k, false, true)?;
    let s = tape.mul_scalar(s, T::from_f64_lossy(1.0 / (dh as f64).sqrt()))?;
    let a = tape.softmax_masked(s, mask)?;
    let o = tape.matmul(a, v)?;
    let o = tape.permute(o, &[0, 1, 3, 2, 4])?;
    let o = tape.reshape(o, &[b, n, n, d])?;
    Ok(tape.linear(o, p.var(&format!("{prefix}.o.w")), p.var(&format!("{prefix}.o.b")))?)
}

/// Pre-norm block: `h = m + Attn(LN(m))`, `out = h + FFN(LN(h))`.
pub fn attention_layer<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    prefix: &str,
    m: Var,
    heads: usize,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let eps = T::from_f64_lossy(LN_EPS);
    let ln = |tape: &mut Tape<T>, x: Var, name: &str| {
        tape.layer_norm(x, p.var(&format!("{prefix}.{name}.g")), p.var(&format!("{prefix}.{name}.b")), eps)
    };
    let x = ln(tape, m, "ln1")?;
    let a = attention(tape, p, prefix, x, heads, mask)?;
    let h = tape.add(m, a)?;
    let x = ln(tape, h, "ln2")?;
    let f = tape.linear(x, p.var(&format!("{prefix}.ff1.w")), p.var(&format!("{prefix}.ff1.b")))?;
    let f = tape.relu(f)?;
    let f = tape.linear(f, p.var(&format!("{prefix}.ff2.w")), p.var(&format!("{prefix}.ff2.b")))?;
    Ok(tape.add(h, f)?)
}

fn stack<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    name: &str,
    layers: usize,
    mut m: Var,
    mask: &[bool],
) -> Result<Var> {
    for l in 0..layers {
        m = attention_layer(tape, p, &format!("{name}.{l}"), m, cfg.heads, Some(mask))?;
    }
    let eps = T::from_f64_lossy(LN_EPS);
    Ok(tape.layer_norm(m, p.var(&format!("{name}.ln.g")), p.var(&format!("{name}.ln.b")), eps)?)
}

/// Row indices of the diagonal messages `m_ii`, `i` in `first..first + count`,
/// of a `[B, N, N, d]` tensor viewed as `[B·N·N, d]`.
fn diagonal_rows(b: usize, n: usize, first: usize, count: usize) -> Vec<usize> {
    (0..b).flat_map(|g| (first..first + count).map(move |i| (g * n + i) * n + i)).collect()
}

/// Encoder outputs for a batch.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `[B, d_z]`.
    pub mu: Var,
    /// `[B, d_z]`, the unconstrained head output.
    pub log_sigma: Var,
    /// `[B, d_z]`, `exp(log_sigma)`.
    pub sigma: Var,
    /// `[B, n, d_m]`: `m_ii` of the real nodes `i ≥ 1`, padded rows unspecified.
    pub self_messages: Var,
}

/// Runs the encoder on a batch that carries the embedding node.
pub fn encode<T: Scalar>(tape: &mut Tape<T>, p: &Bound, cfg: &ModelConfig, batch: &PaddedBatch<T>) -> Result<Encoded> {
    if !batch.has_embedding_slot() {
        return Err(GraphError::Malformed("encoder input lacks the embedding node".into()).into());
    }
    let (b, n1) = (batch.batch_size(), batch.n_max());
    let m0 = build_message_matrix(
        tape,
        batch.node_features(),
        batch.edge_features(),
        p.var("enc.msg.w"),
        p.var("enc.msg.b"),
        Activation::Relu,
    )?;
    let mask = attention_mask(batch.mask(), b, n1, cfg.heads);
    let m = stack(tape, p, cfg, "enc", cfg.l_enc, m0, &mask)?;
    let flat = tape.reshape(m, &[b * n1 * n1, cfg.d_m])?;
    let emb = tape.gather_rows(flat, &diagonal_rows(b, n1, 0, 1))?;
    let mu = tape.linear(emb, p.var("enc.mu.w"), p.var("enc.mu.b"))?;
    let log_sigma = tape.linear(emb, p.var("enc.logsigma.w"), p.var("enc.logsigma.b"))?;
    let sigma = tape.exp(log_sigma)?;
    let nodes = tape.gather_rows(flat, &diagonal_rows(b, n1, 1, n1 - 1))?;
    let self_messages = tape.reshape(nodes, &[b, n1 - 1, cfg.d_m])?;
    Ok(Encoded { mu, log_sigma, sigma, self_messages })
}

/// Node-wise linear scores `[B, n]` from `[B, n, d_m]` self-messages.
pub fn permuter_scores<T: Scalar>(tape: &mut Tape<T>, p: &Bound, self_messages: Var) -> Result<Var> {
    let (b, n) = match *tape.shape(self_messages) {
        [b, n, _] => (b, n),
        ref s => return Err(shape_err("permuter", format!("self-messages {s:?}"))),
    };
    let s = tape.linear(self_messages, p.var("perm.w"), p.var("perm.b"))?;
    Ok(tape.reshape(s, &[b, n])?)
}

/// `z` from `(μ, σ)` on the tape.
pub fn sample_latent<T: Scalar>(tape: &mut Tape<T>, enc: &Encoded, mode: LatentMode) -> Result<Var> {
    match mode {
        LatentMode::Mean => Ok(enc.mu),
        LatentMode::Sample(seed) => {
            let shape = tape.shape(enc.mu).to_vec();
            let mut rng = Rng::new(seed);
            let eps: Vec<T> = (0..shape.iter().product()).map(|_| T::from_f64_lossy(rng.normal())).collect();
            let eps = tape.constant(Tensor::new(&shape, eps)?);
            let noise = tape.mul(enc.sigma, eps)?;
            Ok(tape.add(enc.mu, noise)?)
        }
    }
}

/// Sinusoidal embedding of index `i`: `sin(i / 10000^(2k/d_z))` at even `k`,
/// `cos(...)` at odd `k`, with `d_z = 2 d_pe`.
pub fn position_embedding(i: usize, d_pe: usize) -> Vec<f64> {
    let d_z = (2 * d_pe) as f64;
    (0..d_pe)
        .map(|k| {
            let angle = i as f64 / 10000f64.powf(2.0 * k as f64 / d_z);
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Decoder outputs aligned to the order implied by the permutation.
#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    /// `[B, n, d_v_out]`.
    pub node_logits: Var,
    /// `[B, n, n]`, exactly symmetric; diagonal and padding unspecified.
    pub edge_logits: Var,
}

/// Decodes `z: [B, d_z]` with permutations `perm: [B, n, n]` (ranks × nodes).
///
/// Node `j` receives the position embedding `Σ_r perm[r][j] PE(r)`, so a
/// permutation matrix `P` reorders the canonical output by `Pᵀ`.
pub fn decode<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    z: Var,
    perm: Var,
    sizes: &[usize],
) -> Result<Decoded> {
    let (b, n) = match *tape.shape(perm) {
        [b, n, n2] if n == n2 && b == sizes.len() => (b, n),
        ref s => return Err(shape_err("decode", format!("permutation {s:?} for {} graphs", sizes.len()))),
    };
    if tape.shape(z) != [b, cfg.d_z] {
        return Err(shape_err("decode", format!("latent {:?}", tape.shape(z))));
    }
    if let Some(&bad) = sizes.iter().find(|&&s| s == 0 || s > n || s > cfg.n_max) {
        return Err(Error::Config(format!("node count {bad} outside 1..={}", cfg.n_max.min(n))));
    }
    let d_pe = cfg.d_pe();
    let pe: Vec<T> = (0..n).flat_map(position_embedding_iter(d_pe)).collect();
    let pe = tape.constant(Tensor::new(&[n, d_pe], pe)?);
    let assigned = assign_rows_tape(tape, perm, pe)?;
    let zeros = tape.constant(Tensor::zeros(&[b, n, d_pe]));
    // (z + [PE_i ‖ PE_j]) W + b, expanded by linearity.
    let left = tape.concat(&[assigned, zeros])?;
    let right = tape.concat(&[zeros, assigned])?;
    let w = p.var("dec.in.w");
    let a = tape.matmul(left, w)?;
    let a = tape.reshape(a, &[b, n, 1, cfg.d_m])?;
    let c = tape.matmul(right, w)?;
    let c = tape.reshape(c, &[b, 1, n, cfg.d_m])?;
    let zw = tape.linear(z, w, p.var("dec.in.b"))?;
    let zw = tape.reshape(zw, &[b, 1, 1, cfg.d_m])?;
    let m0 = tape.add(a, c)?;
    let m0 = tape.add(m0, zw)?;
    let m0 = tape.relu(m0)?;
    let node_mask: Vec<bool> = sizes.iter().flat_map(|&s| (0..n).map(move |i| i < s)).collect();
    let mask = attention_mask(&node_mask, b, n, cfg.heads);
    let m = stack(tape, p, cfg, "dec", cfg.l_dec, m0, &mask)?;

    let flat = tape.reshape(m, &[b * n * n, cfg.d_m])?;
    let diag = tape.gather_rows(flat, &diagonal_rows(b, n, 0, n))?;
    let node_logits = tape.linear(diag, p.var("dec.node.w"), p.var("dec.node.b"))?;
    let node_logits = tape.reshape(node_logits, &[b, n, cfg.d_v_out()])?;
    // 0.5 (m_ij + m_ji) W_e + b_e, symmetrized after the projection.
    let s = tape.matmul(flat, p.var("dec.edge.w"))?;
    let s = tape.reshape(s, &[b, n, n])?;
    let st = tape.transpose(s)?;
    let sym = tape.add(s, st)?;
    let sym = tape.mul_scalar(sym, T::from_f64_lossy(0.5))?;
    let edge_logits = tape.add(sym, p.var("dec.edge.b"))?;
    Ok(Decoded { node_logits, edge_logits })
}

fn position_embedding_iter<T: Scalar>(d_pe: usize) -> impl Fn(usize) -> Vec<T> {
    move |i| position_embedding(i, d_pe).into_iter().map(T::from_f64_lossy).collect()
}

/// Node-count logits `[B, n_max - n_min + 1]` from `z: [B, d_z]`.
pub fn predict_node_count<T: Scalar>(tape: &mut Tape<T>, p: &Bound, z: Var) -> Result<Var> {
    let h = tape.linear(z, p.var("count.w1"), p.var("count.b1"))?;
    let h = tape.relu(h)?;
    Ok(tape.linear(h, p.var("count.w2"), p.var("count.b2"))?)
}

/// Every intermediate of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub encoded: Encoded,
    /// `[B, n]` permuter scores.
    pub scores: Var,
    /// `[B, n, n]` soft or hard permutation, zero outside each graph.
    pub perm: Var,
    pub z: Var,
    pub decoded: Decoded,
    pub count_logits: Var,
}

/// Embedding node, encoder, permuter, SoftSort, latent, decoder, count head.
pub fn full_forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    batch: &PaddedBatch<T>,
    latent: LatentMode,
    perm_mode: PermMode,
) -> Result<Forward> {
    let with_emb = add_embedding_node(batch)?;
    let encoded = encode(tape, p, cfg, &with_emb)?;
    let scores = permuter_scores(tape, p, encoded.self_messages)?;
    let perm = match perm_mode {
        PermMode::Soft => softsort_tape(tape, scores, batch.sizes(), cfg.tau)?,
        PermMode::Hard => {
            let t = hard_perm_tensor::<T>(tape.value(scores), batch.sizes())?;
            tape.constant(t)
        }
    };
    let z = sample_latent(tape, &encoded, latent)?;
    let decoded = decode(tape, p, cfg, z, perm, batch.sizes())?;
    let count_logits = predict_node_count(tape, p, z)?;
    Ok(Forward { encoded, scores, perm, z, decoded, count_logits })
}

/// `[B, n, n]` hard argsort permutations of `[B, n]` scores, zero-padded.
pub fn hard_perm_tensor<T: Scalar>(scores: &Tensor<T>, sizes: &[usize]) -> Result<Tensor<T>> {
    let n = scores.shape()[1];
    let mut out = vec![T::zero(); sizes.len() * n * n];
    for (g, &s) in sizes.iter().enumerate() {
        let perm = hard_perm_from_scores(&scores.data()[g * n..g * n + s])?;
        for (r, &j) in perm.mapping().iter().enumerate() {
            out[(g * n + r) * n + j] = T::one();
        }
    }
    Ok(Tensor::new(&[sizes.len(), n, n], out)?)
}

/// Mean and standard deviation of `q(z | G)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LatentCode {
    /// `μ` in [`LatentMode::Mean`], otherwise `μ + σ ⊙ ε` with `ε` from `seed`.
    pub fn sample(&self, mode: LatentMode) -> Vec<f64> {
        match mode {
            LatentMode::Mean => self.mu.clone(),
            LatentMode::Sample(seed) => {
                let mut rng = Rng::new(seed);
                self.mu.iter().zip(&self.sigma).map(|(m, s)| m + s * rng.normal()).collect()
            }
        }
    }
}

/// Deterministic reconstruction of one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub code: LatentCode,
    pub scores: Vec<f64>,
    /// Hard permutation from the scores (rank `r` selects node `mapping[r]`).
    pub perm: Permutation,
    /// Row-major `n x n` edge logits in input order (zero diagonal).
    pub edge_logits: Vec<f64>,
    /// `sigmoid(edge_logits)` off the diagonal.
    pub edge_probs: Vec<f64>,
    /// `n x d_v_out` node logits.
    pub node_logits: Vec<f64>,
    pub count_probs: Vec<f64>,
}

impl Reconstruction {
    /// Adjacency thresholded at probability 0.5.
    pub fn graph(&self) -> Graph {
        let n = self.scores.len();
        let mut g = Graph::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                if self.edge_probs[i * n + j] > 0.5 {
                    g.set_edge(i, j, true);
                }
            }
        }
        g
    }
}

/// Inference wrapper around trained parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    params: ModelParams<T>,
    batch_size: usize,
}

impl<T: Scalar> Model<T> {
    pub fn new(params: ModelParams<T>) -> Self {
        Self { params, batch_size: 32 }
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    fn batches<'g>(&self, graphs: &'g [Graph]) -> impl Iterator<Item = &'g [Graph]> {
        graphs.chunks(self.batch_size.max(1))
    }

    fn check_graphs(&self, graphs: &[Graph]) -> Result<()> {
        let cfg = self.config();
        for g in graphs {
            if g.n() > cfg.n_max {
                return Err(Error::Config(format!("graph with {} nodes exceeds n_max={}", g.n(), cfg.n_max)));
            }
            if g.d_v() != cfg.node_features {
                return Err(Error::Config(format!(
                    "graph has {} feature channels, model expects {}",
                    g.d_v(),
                    cfg.node_features
                )));
            }
        }
        Ok(())
    }

    /// `(μ, σ)` per graph.
    pub fn encode(&self, graphs: &[Graph]) -> Result<Vec<LatentCode>> {
        self.check_graphs(graphs)?;
        let cfg = self.config();
        let mut out = Vec::with_capacity(graphs.len());
        for chunk in self.batches(graphs) {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false)?;
            let batch = add_embedding_node(&pad_batch::<T>(chunk, false, cfg.edge_features)?)?;
            let enc = encode(&mut tape, &p, cfg, &batch)?;
            let mu = tape.value(enc.mu).to_f64_vec();
            let sigma = tape.value(enc.sigma).to_f64_vec();
            for g in 0..chunk.len() {
                let r = g * cfg.d_z..(g + 1) * cfg.d_z;
                out.push(LatentCode { mu: mu[r.clone()].to_vec(), sigma: sigma[r].to_vec() });
            }
        }
        Ok(out)
    }

    /// Permuter scores of the real nodes of every graph.
    pub fn scores(&self, graphs: &[Graph]) -> Result<Vec<Vec<f64>>> {
        self.check_graphs(graphs)?;
        let cfg = self.config();
        let mut out = Vec::with_capacity(graphs.len());
        for chunk in self.batches(graphs) {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false)?;
            let batch = add_embedding_node(&pad_batch::<T>(chunk, false, cfg.edge_features)?)?;
            let enc = encode(&mut tape, &p, cfg, &batch)?;
            let s = permuter_scores(&mut tape, &p, enc.self_messages)?;
            let v = tape.value(s);
            let n = v.shape()[1];
            for (g, graph) in chunk.iter().enumerate() {
                out.push(v.data()[g * n..g * n + graph.n()].iter().map(|x| x.to_f64_lossy()).collect());
            }
        }
        Ok(out)
    }

    /// Deterministic forward pass (`z = μ`, hard permutation) per graph.
    pub fn reconstruct(&self, graphs: &[Graph]) -> Result<Vec<Reconstruction>> {
        self.check_graphs(graphs)?;
        let cfg = self.config();
        let mut out = Vec::with_capacity(graphs.len());
        for chunk in self.batches(graphs) {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false)?;
            let batch = pad_batch::<T>(chunk, false, cfg.edge_features)?;
            let f = full_forward(&mut tape, &p, cfg, &batch, LatentMode::Mean, PermMode::Hard)?;
            let n = batch.n_max();
            let mu = tape.value(f.encoded.mu).to_f64_vec();
            let sigma = tape.value(f.encoded.sigma).to_f64_vec();
            let scores = tape.value(f.scores).to_f64_vec();
            let edges = tape.value(f.decoded.edge_logits).to_f64_vec();
            let nodes = tape.value(f.decoded.node_logits).to_f64_vec();
            let counts = tape.value(f.count_logits).to_f64_vec();
            let (dv, cc) = (cfg.d_v_out(), cfg.count_classes());
            for (g, graph) in chunk.iter().enumerate() {
                let s = graph.n();
                let sc: Vec<f64> = scores[g * n..g * n + s].to_vec();
                let mut logits = vec![0.0; s * s];
                let mut probs = vec![0.0; s * s];
                for i in 0..s {
                    for j in 0..s {
                        if i != j {
                            logits[i * s + j] = edges[(g * n + i) * n + j];
                            probs[i * s + j] = sigmoid(logits[i * s + j]);
                        }
                    }
                }
                out.push(Reconstruction {
                    code: LatentCode {
                        mu: mu[g * cfg.d_z..(g + 1) * cfg.d_z].to_vec(),
                        sigma: sigma[g * cfg.d_z..(g + 1) * cfg.d_z].to_vec(),
                    },
                    perm: hard_perm_from_scores(&sc)?,
                    scores: sc,
                    edge_logits: logits,
                    edge_probs: probs,
                    node_logits: nodes[g * n * dv..(g * n + s) * dv].to_vec(),
                    count_probs: softmax(&counts[g * cc..(g + 1) * cc]),
                });
            }
        }
        Ok(out)
    }

    /// Decodes a latent vector on `n` nodes with the permutation `perm`
    /// (identity yields the canonical order). Returns node logits `n x d_v_out`
    /// and symmetric edge logits `n x n`.
    pub fn decode(&self, z: &[f64], perm: &Permutation, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let cfg = self.config();
        if z.len() != cfg.d_z || perm.len() != n {
            return Err(Error::Config(format!("decode needs d_z={} and a permutation of {n}", cfg.d_z)));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false)?;
        let zt = tape.constant(Tensor::new(&[1, cfg.d_z], z.iter().map(|&v| T::from_f64_lossy(v)).collect())?);
        let pm = tape.constant(Tensor::new(&[1, n, n], perm.matrix().into_iter().map(T::from_f64_lossy).collect())?);
        let d = decode(&mut tape, &p, cfg, zt, pm, &[n])?;
        Ok((tape.value(d.node_logits).to_f64_vec(), tape.value(d.edge_logits).to_f64_vec()))
    }

    /// Probabilities over node counts `n_min..=n_max`.
    pub fn node_count_probs(&self, z: &[f64]) -> Result<Vec<f64>> {
        let cfg = self.config();
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false)?;
        let zt = tape.constant(Tensor::new(&[1, cfg.d_z], z.iter().map(|&v| T::from_f64_lossy(v)).collect())?);
        let logits = predict_node_count(&mut tape, &p, zt)?;
        Ok(softmax(&tape.value(logits).to_f64_vec()))
    }

    /// Most likely node count for `z`.
    pub fn predict_count(&self, z: &[f64]) -> Result<usize> {
        let probs = self.node_count_probs(z)?;
        let best = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a))).unwrap_or(0);
        Ok(self.config().n_min + best)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
