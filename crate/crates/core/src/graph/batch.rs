//! Zero-padded batches of graphs.

use serde::{Deserialize, Serialize};

use super::edits::{build_edge_features, edge_feature_width};
use super::{Family, Graph, Result};
use crate::error::GraphError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Edge-feature layout: presence one-hot, optionally followed by hop-distance buckets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeFeatures {
    pub use_topo: bool,
    pub cap: usize,
}

impl Default for EdgeFeatures {
    fn default() -> Self {
        Self { use_topo: false, cap: 8 }
    }
}

impl EdgeFeatures {
    pub fn width(&self) -> usize {
        edge_feature_width(self.use_topo, self.cap)
    }
}

/// Graphs stacked to a common node count `N`.
///
/// Tensors are `B x N x d_v` and `B x N x N x d_e`; `mask[b * N + i]` is true
/// for real nodes (and for the embedding slot when present).
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch<T: Scalar> {
    node_features: Tensor<T>,
    edge_features: Tensor<T>,
    mask: Vec<bool>,
    sizes: Vec<usize>,
    embedding_slot: bool,
    families: Vec<Option<Family>>,
}

impl<T: Scalar> PaddedBatch<T> {
    pub(crate) fn from_parts(
        node_features: Tensor<T>,
        edge_features: Tensor<T>,
        sizes: Vec<usize>,
        embedding_slot: bool,
        families: Vec<Option<Family>>,
    ) -> Self {
        let b = sizes.len();
        let n = node_features.shape()[1];
        let offset = usize::from(embedding_slot);
        let mut mask = vec![false; b * n];
        for (g, &s) in sizes.iter().enumerate() {
            mask[g * n..g * n + s + offset].fill(true);
        }
        Self { node_features, edge_features, mask, sizes, embedding_slot, families }
    }

    pub fn batch_size(&self) -> usize {
        self.sizes.len()
    }

    /// Padded node count, including the embedding slot if present.
    pub fn n_max(&self) -> usize {
        self.node_features.shape()[1]
    }

    pub fn d_v(&self) -> usize {
        self.node_features.shape()[2]
    }

    pub fn d_e(&self) -> usize {
        self.edge_features.shape()[3]
    }

    pub fn node_features(&self) -> &Tensor<T> {
        &self.node_features
    }

    pub fn edge_features(&self) -> &Tensor<T> {
        &self.edge_features
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Real node counts, excluding the embedding slot.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn has_embedding_slot(&self) -> bool {
        self.embedding_slot
    }

    pub fn families(&self) -> &[Option<Family>] {
        &self.families
    }

    /// Index of the first real node of every graph.
    pub fn first_node(&self) -> usize {
        usize::from(self.embedding_slot)
    }
}

/// Pads `graphs` to the largest node count.
///
/// With `embedding_slot`, index 0 of every graph is reserved (all-zero
/// features, mask true) and real nodes start at 1.
pub fn pad_batch<T: Scalar>(graphs: &[Graph], embedding_slot: bool, edges: EdgeFeatures) -> Result<PaddedBatch<T>> {
    let first = graphs.first().ok_or(GraphError::EmptyBatch)?;
    let d_v = first.d_v();
    if let Some(g) = graphs.iter().find(|g| g.d_v() != d_v) {
        return Err(GraphError::SizeMismatch(format!("node feature width {} vs {d_v}", g.d_v())));
    }
    let d_e = edges.width();
    let off = usize::from(embedding_slot);
    let n_max = graphs.iter().map(Graph::n).max().unwrap_or(0) + off;
    let b = graphs.len();
    let mut x = vec![T::zero(); b * n_max * d_v];
    let mut e = vec![T::zero(); b * n_max * n_max * d_e];
    for (gi, g) in graphs.iter().enumerate() {
        let n = g.n();
        for (i, row) in g.node_features().chunks(d_v).enumerate() {
            let dst = (gi * n_max + i + off) * d_v;
            for (k, &v) in row.iter().enumerate() {
                x[dst + k] = T::from_f64_lossy(v);
            }
        }
        let feats = build_edge_features(g, edges.use_topo, edges.cap);
        for i in 0..n {
            for j in 0..n {
                let src = (i * n + j) * d_e;
                let dst = ((gi * n_max + i + off) * n_max + j + off) * d_e;
                for k in 0..d_e {
                    e[dst + k] = T::from_f64_lossy(feats[src + k]);
                }
            }
        }
    }
    Ok(PaddedBatch::from_parts(
        Tensor::new(&[b, n_max, d_v], x).expect("sized above"),
        Tensor::new(&[b, n_max, n_max, d_e], e).expect("sized above"),
        graphs.iter().map(Graph::n).collect(),
        embedding_slot,
        graphs.iter().map(|g| g.family().cloned()).collect(),
    ))
}

/// Recovers the graphs of a batch from the node features and the edge-presence channel.
pub fn unpad<T: Scalar>(batch: &PaddedBatch<T>) -> Vec<Graph> {
    let (n_max, d_v, d_e) = (batch.n_max(), batch.d_v(), batch.d_e());
    let off = batch.first_node();
    let x = batch.node_features.data();
    let e = batch.edge_features.data();
    batch
        .sizes
        .iter()
        .enumerate()
        .map(|(gi, &n)| {
            let mut g = Graph::empty(n);
            for i in 0..n {
                for j in i + 1..n {
                    let o = ((gi * n_max + i + off) * n_max + j + off) * d_e;
                    if e[o] > T::zero() {
                        g.set_edge(i, j, true);
                    }
                }
            }
            let feats = (0..n)
                .flat_map(|i| {
                    let o = (gi * n_max + i + off) * d_v;
                    x[o..o + d_v].iter().map(|v| v.to_f64_lossy())
                })
                .collect();
            let mut g = g.with_node_features(d_v, feats).expect("sized above");
            if let Some(f) = &batch.families[gi] {
                g = g.with_family(f.clone());
            }
            g
        })
        .collect()
}
