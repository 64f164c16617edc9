//! Undirected simple graphs, node relabeling and the synthetic families.

mod batch;
mod dataset;
mod edits;
mod generators;

pub use batch::{pad_batch, unpad, EdgeFeatures, PaddedBatch};
pub use dataset::{read_dataset, write_dataset, DatasetReader, FORMAT_NAME, FORMAT_VERSION};
pub use edits::{build_edge_features, edge_feature_width, edit_sequence, topological_distances};
pub use generators::{gen_graph, generate_dataset, DatasetSpec, Family, FAMILY_NAMES};

use crate::error::GraphError;
use crate::rng::Rng;

type Result<T> = std::result::Result<T, GraphError>;

/// A simple undirected graph with dense adjacency and real node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    d_v: usize,
    node_features: Vec<f64>,
    adjacency: Vec<bool>,
    family: Option<Family>,
}

impl Graph {
    /// Edgeless graph on `n` nodes with a single constant feature channel.
    pub fn empty(n: usize) -> Self {
        Self { n, d_v: 1, node_features: vec![1.0; n], adjacency: vec![false; n * n], family: None }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(GraphError::Malformed("graph needs at least one node".into()));
        }
        let mut g = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::Malformed(format!("edge ({i},{j}) out of range for n={n}")));
            }
            if i == j {
                return Err(GraphError::Malformed(format!("self-loop at node {i}")));
            }
            g.set_edge(i, j, true);
        }
        Ok(g)
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Self::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                g.set_edge(i, j, true);
            }
        }
        g
    }

    pub fn path(n: usize) -> Self {
        let mut g = Self::empty(n);
        for i in 1..n {
            g.set_edge(i - 1, i, true);
        }
        g
    }

    /// Replaces the node features with an `n x d_v` row-major matrix.
    pub fn with_node_features(mut self, d_v: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != self.n * d_v {
            return Err(GraphError::SizeMismatch(format!(
                "{} feature values for {} nodes x {d_v} channels",
                features.len(),
                self.n
            )));
        }
        self.d_v = d_v;
        self.node_features = features;
        Ok(self)
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = Some(family);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn node_features(&self) -> &[f64] {
        &self.node_features
    }

    pub fn family(&self) -> Option<&Family> {
        self.family.as_ref()
    }

    /// Row-major `n x n` adjacency.
    pub fn adjacency(&self) -> &[bool] {
        &self.adjacency
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        debug_assert!(i != j || !present);
        self.adjacency[i * self.n + j] = present;
        self.adjacency[j * self.n + i] = present;
    }

    /// Edges as `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn non_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if !self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a).count() / 2
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i * self.n..(i + 1) * self.n].iter().filter(|&&a| a).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.has_edge(i, j))
    }

    pub fn is_connected(&self) -> bool {
        let dist = topological_distances(self, self.n.max(1));
        (1..self.n).all(|j| self.n == 1 || dist[j] < self.n.max(1))
    }

    /// Adjacency as a 0/1 matrix.
    pub fn adjacency_matrix(&self) -> Vec<f64> {
        self.adjacency.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect()
    }

    /// Checks symmetry, an empty diagonal and feature sizes.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(GraphError::Malformed("graph needs at least one node".into()));
        }
        if self.adjacency.len() != self.n * self.n || self.node_features.len() != self.n * self.d_v {
            return Err(GraphError::Malformed("storage size does not match n".into()));
        }
        for i in 0..self.n {
            if self.has_edge(i, i) {
                return Err(GraphError::Malformed(format!("self-loop at node {i}")));
            }
            for j in 0..i {
                if self.has_edge(i, j) != self.has_edge(j, i) {
                    return Err(GraphError::Malformed(format!("asymmetric entry ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    /// Induced subgraph on `nodes`, relabeled in the given order.
    pub fn induced(&self, nodes: &[usize]) -> Graph {
        let mut g = Graph::empty(nodes.len());
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate().skip(a + 1) {
                if self.has_edge(i, j) {
                    g.set_edge(a, b, true);
                }
            }
        }
        let d = self.d_v;
        g.d_v = d;
        g.node_features = nodes.iter().flat_map(|&i| self.node_features[i * d..(i + 1) * d].to_vec()).collect();
        g
    }
}

/// A bijection on `0..n`: new node `i` is old node `mapping[i]`.
///
/// As a matrix, `P[i][mapping[i]] = 1`, so relabeling is `X' = P X` and
/// `A' = P A Pᵀ`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(GraphError::InvalidPermutation(format!("{mapping:?} is not a bijection")));
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self { mapping: (0..n).collect() }
    }

    pub fn random(n: usize, rng: &mut Rng) -> Self {
        Self { mapping: rng.permutation(n) }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self { mapping: inv }
    }

    /// Matrix product `self · other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Permutation) -> Self {
        Self { mapping: self.mapping.iter().map(|&m| other.mapping[m]).collect() }
    }

    /// Dense `n x n` 0/1 matrix.
    pub fn matrix(&self) -> Vec<f64> {
        let n = self.len();
        let mut p = vec![0.0; n * n];
        for (i, &m) in self.mapping.iter().enumerate() {
            p[i * n + m] = 1.0;
        }
        p
    }

    /// Reads a hard permutation matrix back into a mapping.
    pub fn from_matrix(p: &[f64], n: usize) -> Result<Self> {
        if p.len() != n * n {
            return Err(GraphError::SizeMismatch(format!("{} entries for a {n}x{n} matrix", p.len())));
        }
        let mut mapping = Vec::with_capacity(n);
        for row in p.chunks(n) {
            let ones: Vec<usize> = (0..n).filter(|&j| row[j] == 1.0).collect();
            if ones.len() != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(GraphError::InvalidPermutation("row is not one-hot".into()));
            }
            mapping.push(ones[0]);
        }
        Self::new(mapping)
    }

    /// Reorders rows of a row-major `n x d` matrix.
    pub fn apply_rows<T: Copy>(&self, rows: &[T], d: usize) -> Vec<T> {
        self.mapping.iter().flat_map(|&m| rows[m * d..(m + 1) * d].iter().copied()).collect()
    }
}

/// `X' = P X`, `A' = P A Pᵀ`.
pub fn permute_graph(g: &Graph, p: &Permutation) -> Result<Graph> {
    if p.len() != g.n {
        return Err(GraphError::SizeMismatch(format!("permutation of {} for a graph of {}", p.len(), g.n)));
    }
    let n = g.n;
    let m = &p.mapping;
    let mut adjacency = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            adjacency[i * n + j] = g.adjacency[m[i] * n + m[j]];
        }
    }
    Ok(Graph {
        n,
        d_v: g.d_v,
        node_features: p.apply_rows(&g.node_features, g.d_v),
        adjacency,
        family: g.family.clone(),
    })
}
