//! Random graph families.
//!
//! Every generator is a pure function of `(family, n, seed)` driven by
//! [`Rng`]. The constructions follow the usual NetworkX definitions; the
//! preferential-attachment families use the star-graph seed and the
//! repeated-node list.

use serde::{Deserialize, Serialize};

use super::{Graph, Result};
use crate::error::GraphError;
use crate::rng::Rng;

pub const FAMILY_NAMES: [&str; 10] = [
    "erdos_renyi",
    "barabasi_albert",
    "ego",
    "geometric",
    "regular",
    "powerlaw_tree",
    "watts_strogatz",
    "extended_ba",
    "newman_ws",
    "dual_ba",
];

/// A graph family together with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family {
    ErdosRenyi { p: f64 },
    BarabasiAlbert { m: usize },
    /// Neighborhood of the highest-degree node of `ER(2n, p)`.
    Ego { p: f64 },
    /// Points in the unit square joined when closer than `radius`.
    Geometric { radius: f64 },
    Regular { d: usize },
    PowerlawTree { gamma: f64 },
    WattsStrogatz { k: usize, p: f64 },
    ExtendedBa { m: usize, p: f64, q: f64 },
    NewmanWs { k: usize, p: f64 },
    DualBa { m1: usize, m2: usize, p: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::ErdosRenyi { .. } => "erdos_renyi",
            Family::BarabasiAlbert { .. } => "barabasi_albert",
            Family::Ego { .. } => "ego",
            Family::Geometric { .. } => "geometric",
            Family::Regular { .. } => "regular",
            Family::PowerlawTree { .. } => "powerlaw_tree",
            Family::WattsStrogatz { .. } => "watts_strogatz",
            Family::ExtendedBa { .. } => "extended_ba",
            Family::NewmanWs { .. } => "newman_ws",
            Family::DualBa { .. } => "dual_ba",
        }
    }

    /// Builds a family from its name and a JSON parameter object.
    pub fn from_parts(name: &str, params: serde_json::Value) -> Result<Self> {
        if !FAMILY_NAMES.contains(&name) {
            return Err(GraphError::UnknownFamily(name.to_string()));
        }
        serde_json::from_value(serde_json::json!({ "family": name, "params": params }))
            .map_err(|e| GraphError::InvalidParams { family: name.into(), detail: e.to_string() })
    }

    pub fn params_json(&self) -> serde_json::Value {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(mut map)) => map.remove("params").unwrap_or_default(),
            _ => serde_json::Value::Null,
        }
    }

    /// Parameter grid of the ten-family training mix.
    pub fn mix10_grid(name: &str) -> Vec<Family> {
        match name {
            "erdos_renyi" => [0.25, 0.35, 0.5].map(|p| Family::ErdosRenyi { p }).to_vec(),
            "barabasi_albert" => (1..=4).map(|m| Family::BarabasiAlbert { m }).collect(),
            "ego" => vec![Family::Ego { p: 0.3 }],
            "geometric" => [0.3, 0.4, 0.5].map(|radius| Family::Geometric { radius }).to_vec(),
            "regular" => vec![Family::Regular { d: 3 }, Family::Regular { d: 4 }],
            "powerlaw_tree" => vec![Family::PowerlawTree { gamma: 3.0 }],
            "watts_strogatz" => [0.1, 0.3].map(|p| Family::WattsStrogatz { k: 4, p }).to_vec(),
            "extended_ba" => {
                let mut v = Vec::new();
                for p in [0.1, 0.3] {
                    for q in [0.1, 0.3] {
                        v.push(Family::ExtendedBa { m: 2, p, q });
                    }
                }
                v
            }
            "newman_ws" => [0.1, 0.3].map(|p| Family::NewmanWs { k: 4, p }).to_vec(),
            "dual_ba" => vec![
                Family::DualBa { m1: 1, m2: 3, p: 0.5 },
                Family::DualBa { m1: 2, m2: 4, p: 0.5 },
            ],
            _ => Vec::new(),
        }
    }

    fn invalid(&self, detail: impl Into<String>) -> GraphError {
        GraphError::InvalidParams { family: self.name().into(), detail: detail.into() }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let prob = |p: f64, what: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(self.invalid(format!("{what}={p} outside [0,1]")))
            }
        };
        if n == 0 {
            return Err(self.invalid("n must be at least 1"));
        }
        match *self {
            Family::ErdosRenyi { p } | Family::Ego { p } => prob(p, "p"),
            Family::BarabasiAlbert { m } => {
                if m >= 1 && m < n {
                    Ok(())
                } else {
                    Err(self.invalid(format!("need 1 <= m < n, got m={m}, n={n}")))
                }
            }
            Family::Geometric { radius } => {
                if radius >= 0.0 && radius.is_finite() {
                    Ok(())
                } else {
                    Err(self.invalid(format!("radius={radius}")))
                }
            }
            Family::Regular { d } => {
                if d >= n {
                    Err(self.invalid(format!("degree {d} needs more than {n} nodes")))
                } else if (n * d) % 2 == 1 {
                    Err(self.invalid(format!("n*d = {} is odd", n * d)))
                } else {
                    Ok(())
                }
            }
            Family::PowerlawTree { gamma } => {
                if gamma > 1.0 {
                    Ok(())
                } else {
                    Err(self.invalid(format!("gamma={gamma} must exceed 1")))
                }
            }
            Family::WattsStrogatz { k, p } | Family::NewmanWs { k, p } => {
                prob(p, "p")?;
                if k >= n {
                    Err(self.invalid(format!("k={k} must be below n={n}")))
                } else {
                    Ok(())
                }
            }
            Family::ExtendedBa { m, p, q } => {
                prob(p, "p")?;
                prob(q, "q")?;
                if p + q >= 1.0 {
                    Err(self.invalid("p + q must be below 1"))
                } else if m < 1 || m >= n {
                    Err(self.invalid(format!("need 1 <= m < n, got m={m}, n={n}")))
                } else {
                    Ok(())
                }
            }
            Family::DualBa { m1, m2, p } => {
                prob(p, "p")?;
                if m1 < 1 || m2 < 1 || m1.max(m2) >= n {
                    Err(self.invalid(format!("need 1 <= m1, m2 < n, got ({m1},{m2}), n={n}")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Samples one graph of `family` on `n` nodes.
pub fn gen_graph(family: &Family, n: usize, seed: u64) -> Result<Graph> {
    family.validate(n)?;
    let mut rng = Rng::new(seed);
    let g = match *family {
        Family::ErdosRenyi { p } => erdos_renyi(n, p, &mut rng),
        Family::BarabasiAlbert { m } => preferential(n, m, m, 1.0, &mut rng),
        Family::Ego { p } => ego(n, p, &mut rng),
        Family::Geometric { radius } => geometric(n, radius, &mut rng),
        Family::Regular { d } => regular(n, d, &mut rng).ok_or_else(|| family.invalid("pairing model did not converge"))?,
        Family::PowerlawTree { gamma } => {
            powerlaw_tree(n, gamma, &mut rng).ok_or_else(|| family.invalid("no valid degree sequence found"))?
        }
        Family::WattsStrogatz { k, p } => watts_strogatz(n, k, p, true, &mut rng),
        Family::NewmanWs { k, p } => watts_strogatz(n, k, p, false, &mut rng),
        Family::ExtendedBa { m, p, q } => extended_ba(n, m, p, q, &mut rng),
        Family::DualBa { m1, m2, p } => preferential(n, m1, m2, p, &mut rng),
    };
    Ok(g.with_family(family.clone()))
}

/// What to put in a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    /// One family with fixed parameters.
    Single(Family),
    /// All ten families in rotation, parameters drawn from [`Family::mix10_grid`].
    Mix10,
    /// An explicit list of classes in rotation.
    Classes(Vec<Family>),
}

/// `count` graphs with node counts uniform in `[n_min, n_max]`.
///
/// Graph `i` uses its own sub-stream of `seed`, so prefixes of a dataset do
/// not depend on `count`.
pub fn generate_dataset(spec: &DatasetSpec, n_min: usize, n_max: usize, count: usize, seed: u64) -> Result<Vec<Graph>> {
    if n_min < 1 || n_min > n_max {
        return Err(GraphError::InvalidParams {
            family: "dataset".into(),
            detail: format!("bad node range [{n_min}, {n_max}]"),
        });
    }
    (0..count)
        .map(|i| {
            let mut rng = Rng::with_stream(seed, i as u64 + 1);
            let n = rng.range_inclusive(n_min, n_max);
            let family = match spec {
                DatasetSpec::Single(f) => f.clone(),
                DatasetSpec::Mix10 => {
                    // Only grid entries feasible at this n (e.g. no 3-regular graphs on odd n).
                    let name = FAMILY_NAMES[i % FAMILY_NAMES.len()];
                    let grid: Vec<Family> =
                        Family::mix10_grid(name).into_iter().filter(|f| f.validate(n).is_ok()).collect();
                    if grid.is_empty() {
                        return Err(GraphError::InvalidParams {
                            family: name.into(),
                            detail: format!("no grid entry is feasible for n={n}"),
                        });
                    }
                    grid[rng.below(grid.len())].clone()
                }
                DatasetSpec::Classes(classes) => classes[i % classes.len()].clone(),
            };
            gen_graph(&family, n, rng.next_u64())
        })
        .collect()
}

fn erdos_renyi(n: usize, p: f64, rng: &mut Rng) -> Graph {
    let mut g = Graph::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(p) {
                g.set_edge(i, j, true);
            }
        }
    }
    g
}

/// `m` distinct elements drawn uniformly from `pool` (with multiplicity).
fn random_subset(pool: &[usize], m: usize, rng: &mut Rng) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(m);
    while out.len() < m {
        let x = pool[rng.below(pool.len())];
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Preferential attachment from a star seed; each new node brings `m1`
/// edges with probability `p`, otherwise `m2`. Plain BA is `m1 = m2 = m`.
fn preferential(n: usize, m1: usize, m2: usize, p: f64, rng: &mut Rng) -> Graph {
    let mut g = Graph::empty(n);
    let hub = m1.max(m2);
    for j in 1..=hub {
        g.set_edge(0, j, true);
    }
    let mut repeated: Vec<usize> = Vec::new();
    for v in 0..=hub {
        repeated.extend(std::iter::repeat_n(v, g.degree(v)));
    }
    for source in hub + 1..n {
        let m = if m1 == m2 || rng.uniform() < p { m1 } else { m2 };
        let targets = random_subset(&repeated, m, rng);
        for &t in &targets {
            g.set_edge(source, t, true);
        }
        repeated.extend(&targets);
        repeated.extend(std::iter::repeat_n(source, m));
    }
    g
}

fn ego(n: usize, p: f64, rng: &mut Rng) -> Graph {
    let base = erdos_renyi(2 * n, p, rng);
    let degrees = base.degrees();
    let center = (0..base.n()).max_by_key(|&i| (degrees[i], std::cmp::Reverse(i))).unwrap_or(0);
    // Breadth-first order from the center, truncated to n nodes.
    let mut order = vec![center];
    let mut seen = vec![false; base.n()];
    seen[center] = true;
    let mut head = 0;
    while head < order.len() && order.len() < n {
        let u = order[head];
        head += 1;
        for v in base.neighbors(u).collect::<Vec<_>>() {
            if !seen[v] && order.len() < n {
                seen[v] = true;
                order.push(v);
            }
        }
    }
    // A disconnected base may leave fewer than n reachable nodes; pad with isolated ones.
    for v in 0..base.n() {
        if order.len() >= n {
            break;
        }
        if !seen[v] {
            seen[v] = true;
            order.push(v);
        }
    }
    base.induced(&order)
}

fn geometric(n: usize, radius: f64, rng: &mut Rng) -> Graph {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.uniform(), rng.uniform())).collect();
    let mut g = Graph::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
            if dx * dx + dy * dy <= radius * radius {
                g.set_edge(i, j, true);
            }
        }
    }
    g
}

/// Pairing model with rejection of loops and multi-edges.
fn regular(n: usize, d: usize, rng: &mut Rng) -> Option<Graph> {
    let stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    'attempt: for _ in 0..10_000 {
        let mut s = stubs.clone();
        rng.shuffle(&mut s);
        let mut g = Graph::empty(n);
        for pair in s.chunks(2) {
            let (a, b) = (pair[0], pair[1]);
            if a == b || g.has_edge(a, b) {
                continue 'attempt;
            }
            g.set_edge(a, b, true);
        }
        return Some(g);
    }
    None
}

/// Random tree whose degree sequence follows a discrete power law.
fn powerlaw_tree(n: usize, gamma: f64, rng: &mut Rng) -> Option<Graph> {
    if n <= 2 {
        return Some(Graph::path(n));
    }
    let sample = |rng: &mut Rng| {
        let x = (1.0 - rng.uniform()).powf(-1.0 / (gamma - 1.0));
        (x.round() as usize).clamp(1, n - 1)
    };
    let mut degrees: Vec<usize> = (0..n).map(|_| sample(rng)).collect();
    let target = 2 * (n - 1);
    let mut tries = 0;
    while degrees.iter().sum::<usize>() != target {
        tries += 1;
        if tries > 100_000 {
            return None;
        }
        let idx = rng.below(n);
        degrees[idx] = sample(rng);
    }
    // Prüfer sequence in which node v appears degree(v) - 1 times.
    let mut code: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, degrees[v] - 1)).collect();
    rng.shuffle(&mut code);
    let mut deg = degrees;
    let mut g = Graph::empty(n);
    for &a in &code {
        let leaf = (0..n).find(|&v| deg[v] == 1)?;
        g.set_edge(leaf, a, true);
        deg[leaf] -= 1;
        deg[a] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| deg[v] == 1).collect();
    if rest.len() != 2 {
        return None;
    }
    g.set_edge(rest[0], rest[1], true);
    Some(g)
}

/// Ring lattice with `k / 2` neighbors per side, then random shortcuts:
/// each lattice edge is rewired (`rewire = true`) or gets an extra
/// shortcut from its source (`rewire = false`) with probability `p`.
fn watts_strogatz(n: usize, k: usize, p: f64, rewire: bool, rng: &mut Rng) -> Graph {
    let mut g = Graph::empty(n);
    let half = k / 2;
    for j in 1..=half {
        for u in 0..n {
            let v = (u + j) % n;
            if u != v {
                g.set_edge(u, v, true);
            }
        }
    }
    for j in 1..=half {
        for u in 0..n {
            if rng.uniform() >= p || g.degree(u) >= n - 1 {
                continue;
            }
            let mut w = rng.below(n);
            while w == u || g.has_edge(u, w) {
                w = rng.below(n);
            }
            if rewire {
                let v = (u + j) % n;
                if !g.has_edge(u, v) {
                    continue;
                }
                g.set_edge(u, v, false);
            }
            g.set_edge(u, w, true);
        }
    }
    g
}

/// Albert–Barabási extended model: at each step, with probability `p` add
/// `m` edges between existing nodes, with probability `q` rewire `m` edges,
/// otherwise add a node with `m` preferential edges.
fn extended_ba(n: usize, m: usize, p: f64, q: f64, rng: &mut Rng) -> Graph {
    let mut g = Graph::empty(n);
    let mut size = m;
    let mut pref: Vec<usize> = (0..m).collect();
    let mut edges = 0usize;
    while size < n {
        let a = rng.uniform();
        let clique_degree = size - 1;
        let clique_edges = size * clique_degree / 2;
        if a < p && edges + m <= clique_edges {
            for _ in 0..m {
                let eligible: Vec<usize> = (0..size).filter(|&v| g.degree(v) < clique_degree).collect();
                let Some(&src) = rng.choose(&eligible) else { break };
                let dest: Vec<usize> = pref.iter().copied().filter(|&v| v != src && !g.has_edge(src, v)).collect();
                let Some(&dst) = rng.choose(&dest) else { continue };
                g.set_edge(src, dst, true);
                edges += 1;
                pref.push(src);
                pref.push(dst);
            }
        } else if a >= p && a < p + q && edges >= m && edges < clique_edges {
            for _ in 0..m {
                let eligible: Vec<usize> =
                    (0..size).filter(|&v| g.degree(v) > 0 && g.degree(v) < clique_degree).collect();
                let Some(&node) = rng.choose(&eligible) else { break };
                let nbrs: Vec<usize> = g.neighbors(node).collect();
                let src = nbrs[rng.below(nbrs.len())];
                let dest: Vec<usize> =
                    pref.iter().copied().filter(|&v| v != node && !g.has_edge(node, v)).collect();
                let Some(&dst) = rng.choose(&dest) else { continue };
                g.set_edge(node, src, false);
                g.set_edge(node, dst, true);
                if let Some(pos) = pref.iter().position(|&v| v == src) {
                    pref.remove(pos);
                }
                pref.push(dst);
            }
        } else {
            let targets = random_subset(&pref, m, rng);
            for &t in &targets {
                g.set_edge(size, t, true);
            }
            edges += m;
            pref.extend(&targets);
            pref.extend(std::iter::repeat_n(size, m + 1));
            size += 1;
        }
    }
    g
}
