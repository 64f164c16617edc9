//! Edge substitutions, hop distances and edge-feature tensors.

use std::collections::VecDeque;

use super::{Graph, Result};
use crate::error::GraphError;
use crate::rng::Rng;

/// `k` successive single-edge substitutions of `g`.
///
/// Each step removes one edge and adds one non-edge. Edits never undo an
/// earlier edit, so step `i` is exactly `i` substitutions (Hamming distance
/// `4i` on the symmetric adjacency) away from `g`.
pub fn edit_sequence(g: &Graph, k: usize, seed: u64) -> Result<Vec<Graph>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut removable = g.edges();
    let mut addable = g.non_edges();
    if k > removable.len().min(addable.len()) {
        return Err(GraphError::InfeasibleEdit(format!(
            "{k} substitutions requested, graph has {} edges and {} non-edges",
            removable.len(),
            addable.len()
        )));
    }
    let mut rng = Rng::new(seed);
    let mut current = g.clone();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let (a, b) = removable.swap_remove(rng.below(removable.len()));
        let (c, d) = addable.swap_remove(rng.below(addable.len()));
        current.set_edge(a, b, false);
        current.set_edge(c, d, true);
        out.push(current.clone());
    }
    Ok(out)
}

/// Row-major `n x n` hop distances, clamped to `cap` (also for unreachable pairs).
pub fn topological_distances(g: &Graph, cap: usize) -> Vec<usize> {
    let n = g.n();
    let mut dist = vec![cap; n * n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        let row = &mut dist[s * n..(s + 1) * n];
        row[s] = 0;
        queue.clear();
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let du = row[u];
            if du + 1 >= cap {
                continue;
            }
            for v in g.neighbors(u) {
                if v != s && row[v] == cap {
                    row[v] = du + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    dist
}

/// Width of the edge-feature channel block produced by [`build_edge_features`].
pub fn edge_feature_width(use_topo: bool, cap: usize) -> usize {
    if use_topo {
        2 + cap
    } else {
        2
    }
}

/// Row-major `n x n x d_e` edge features.
///
/// Channel 0 marks an edge, channel 1 a non-edge; with `use_topo` the
/// channels `2..2+cap` one-hot the hop distance `1..=cap`. The diagonal is
/// left zero: self-messages are typed by the model, not here.
pub fn build_edge_features(g: &Graph, use_topo: bool, cap: usize) -> Vec<f64> {
    let n = g.n();
    let d_e = edge_feature_width(use_topo, cap);
    let dist = if use_topo { topological_distances(g, cap) } else { Vec::new() };
    let mut out = vec![0.0; n * n * d_e];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let e = &mut out[(i * n + j) * d_e..(i * n + j + 1) * d_e];
            e[if g.has_edge(i, j) { 0 } else { 1 }] = 1.0;
            if use_topo && cap > 0 {
                e[2 + dist[i * n + j] - 1] = 1.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hop_distances() {
        let d = topological_distances(&Graph::path(3), 8);
        assert_eq!(d[2], 2);
        assert_eq!(d, vec![0, 1, 2, 1, 0, 1, 2, 1, 0]);
        assert_eq!(topological_distances(&Graph::empty(2), 8), vec![0, 8, 8, 0]);
        let k = topological_distances(&Graph::complete(5), 8);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(k[i * 5 + j], usize::from(i != j));
            }
        }
        // Clamp below the true distance.
        assert_eq!(topological_distances(&Graph::path(5), 2)[4], 2);
    }

    #[test]
    fn presence_channels() {
        let n = 4;
        let empty = build_edge_features(&Graph::empty(n), false, 0);
        let full = build_edge_features(&Graph::complete(n), false, 0);
        for i in 0..n {
            for j in 0..n {
                let o = (i * n + j) * 2;
                let off = if i != j { 1.0 } else { 0.0 };
                assert_eq!(empty[o..o + 2], [0.0, off]);
                assert_eq!(full[o..o + 2], [off, 0.0]);
            }
        }
    }

    #[test]
    fn topo_bucket_of_path() {
        let f = build_edge_features(&Graph::path(3), true, 4);
        let e = &f[2 * 6..3 * 6];
        assert_eq!(e, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn edits_on_nearly_complete_graph() {
        let mut g = Graph::complete(4);
        g.set_edge(1, 3, false);
        let seq = edit_sequence(&g, 1, 9).unwrap();
        assert!(seq[0].has_edge(1, 3));
        assert_eq!(seq[0].edge_count(), 5);
        assert!(matches!(edit_sequence(&g, 2, 9), Err(GraphError::InfeasibleEdit(_))));
        assert!(edit_sequence(&g, 0, 9).unwrap().is_empty());
    }
}
