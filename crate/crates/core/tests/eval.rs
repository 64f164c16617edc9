use pigvae::eval::*;
use pigvae::graph::{gen_graph, permute_graph, Family, Graph, Permutation};
use pigvae::model::{Model, ModelConfig, ModelParams};
use pigvae::rng::Rng;
use pigvae::Error;
use proptest::prelude::*;

fn config() -> ModelConfig {
    ModelConfig { d_m: 16, d_z: 8, heads: 2, l_enc: 2, l_dec: 1, n_min: 1, n_max: 14, ..ModelConfig::default() }
}

fn model(seed: u64) -> Model<f32> {
    Model::new(ModelParams::init(&config(), seed).unwrap())
}

fn er(n: usize, seed: u64) -> Graph {
    gen_graph(&Family::ErdosRenyi { p: 0.5 }, n, seed).unwrap()
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}

#[test]
fn auc_extremes() {
    let labels = [false, false, true, true];
    assert_eq!(edge_roc_auc(&[0.1, 0.2, 0.8, 0.9], &labels), Some(1.0));
    assert_eq!(edge_roc_auc(&[0.9, 0.8, 0.2, 0.1], &labels), Some(0.0));
    assert_eq!(edge_roc_auc(&[0.5; 4], &labels), Some(0.5));
    assert_eq!(edge_roc_auc(&[0.1, 0.2], &[true, true]), None);
    assert_eq!(edge_roc_auc(&[0.1, 0.2], &[false, false]), None);
}

#[test]
fn auc_of_random_scores_is_half() {
    let mut rng = Rng::new(3);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.uniform()).collect();
    let labels: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
    let auc = edge_roc_auc(&scores, &labels).unwrap();
    assert!((auc - 0.5).abs() < 0.02, "{auc}");
}

proptest! {
    #[test]
    fn auc_matches_pairwise_oracle(
        pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..200)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 5.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        match edge_roc_auc(&scores, &labels) {
            None => prop_assert!(labels.iter().all(|&l| l) || labels.iter().all(|&l| !l)),
            Some(auc) => prop_assert!((auc - brute_auc(&scores, &labels)).abs() < 1e-12),
        }
    }
}

#[test]
fn rank_statistics() {
    assert_eq!(ranks(&[3.0, 1.0, 2.0, 1.0]), vec![4.0, 1.5, 3.0, 1.5]);
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert!((spearman(&x, &[1.0, 4.0, 9.0, 16.0, 25.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    // d = (0, 0, 1, -1, 0): 1 - 6·2 / (5·24) = 0.9
    assert!((spearman(&x, &[1.0, 2.0, 4.0, 3.0, 5.0]).unwrap() - 0.9).abs() < 1e-12);
    assert_eq!(spearman(&x, &[1.0; 5]), None);
    assert!((pearson(&x, &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn mean_and_stderr() {
    let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
    assert_eq!(m, 2.0);
    assert!((s.unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(mean_stderr(&[4.0]), (4.0, None));
    assert!((bernoulli_nll(0.0, true) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(bernoulli_nll(800.0, true) < 1e-300);
    assert!((bernoulli_nll(800.0, false) - 800.0).abs() < 1e-9);
    assert_eq!(euclidean(&[0.0, 3.0], &[4.0, 0.0]), 5.0);
}

#[test]
fn zero_model_has_coin_flip_nll() {
    let cfg = ModelConfig { n_max: 12, ..config() };
    let m = Model::new(ModelParams::<f64>::zeros(&cfg).unwrap());
    let graphs: Vec<Graph> = (0..4).map(|s| er(12, s)).collect();
    let nll = nll_estimate(&m, &graphs).unwrap();
    assert!((nll - 66.0 * std::f64::consts::LN_2).abs() < 1e-9, "{nll}");
    let r = reconstruction_metrics(&m, &graphs).unwrap();
    assert_eq!(r.baseline_nll, nll);
    assert_eq!(r.roc_auc, Some(0.5));
}

#[test]
fn reconstruction_metrics_rejects_empty() {
    assert!(matches!(reconstruction_metrics(&model(0), &[]), Err(Error::Eval(_))));
}

#[test]
fn invariance_audit_bounds() {
    let m = model(1);
    let graphs: Vec<Graph> = (0..20).map(|s| er(5 + s % 8, s as u64)).collect();
    assert_eq!(invariance_audit(&m, &graphs, 0, 0).unwrap(), 0.0);
    let dev = invariance_audit(&m, &graphs, 3, 9).unwrap();
    assert!(dev < 1e-5, "{dev}");
    assert_eq!(dev, invariance_audit(&m, &graphs, 3, 9).unwrap());
}

#[test]
fn equivariance_audit_passes() {
    let graphs: Vec<Graph> = (0..30).map(|s| er(10 + s % 5, 100 + s as u64)).collect();
    let r = equivariance_audit(&model(2), &graphs, 5).unwrap();
    assert_eq!(r.cases, 30);
    assert!(r.tie_free() >= 15, "{r:?}");
    assert_eq!(r.passed, r.tie_free(), "{r:?}");
}

#[test]
fn tie_detection() {
    assert!(has_ties(&[0.3, 0.1, 0.3 + 1e-7], TIE_TOLERANCE));
    assert!(!has_ties(&[0.3, 0.1, 0.2], TIE_TOLERANCE));
    // the tolerance scales with the largest magnitude
    assert!(has_ties(&[130.0, 130.0005, -20.0], TIE_TOLERANCE));
    assert!(!has_ties(&[130.0, 130.01, -20.0], TIE_TOLERANCE));
    let r = EquivarianceReport { cases: 4, passed: 2, tied: 2 };
    assert_eq!(r.pass_fraction(), 1.0);
}

#[test]
fn ged_curve_on_untrained_model() {
    let base: Vec<Graph> = (0..6).map(|s| er(10, s)).collect();
    let c = ged_curve(&model(3), &base, 4, 2, 11).unwrap();
    assert_eq!(c.steps, vec![0, 1, 2, 3, 4]);
    assert_eq!(c.mean_distance[0], 0.0);
    assert!(c.control_max < 1e-5, "{}", c.control_max);
    assert_eq!(c.base_graphs + c.skipped, 6);
    assert!(c.mean_distance[1..].iter().all(|&d| d > 0.0));
}

#[test]
fn ged_curve_needs_an_editable_graph() {
    let r = ged_curve(&model(3), &[Graph::empty(4)], 2, 1, 0);
    assert!(matches!(r, Err(Error::Eval(_))));
}

#[test]
fn isomorphic_copies_share_embeddings() {
    let graphs: Vec<Graph> =
        (0..20).map(|s| gen_graph(&Family::BarabasiAlbert { m: 2 }, 8 + s % 5, s as u64).unwrap()).collect();
    let r = isomorphism_test(&model(4), &graphs, 1).unwrap();
    assert_eq!(r.pairs, 20);
    assert!(r.max_isomorphic_distance < ISOMORPHIC_TOLERANCE, "{}", r.max_isomorphic_distance);
    assert_eq!(r.isomorphic_match_rate, 1.0);
}

#[test]
fn interpolation_between_identical_endpoints() {
    let m = model(5);
    let g = er(8, 1);
    let seq = interpolate(&m, &g, &g, 5).unwrap();
    assert_eq!(seq.len(), 5);
    assert!(seq.iter().all(|s| s.adjacency() == seq[0].adjacency()));
    assert_eq!(seq[0].adjacency(), decode_canonical(&m, &m.encode(&[g.clone()]).unwrap()[0].mu).unwrap().adjacency());
    assert!(matches!(interpolate(&m, &g, &g, 1), Err(Error::Eval(_))));
}

#[test]
fn canonical_decode_of_a_relabeled_graph_is_unchanged() {
    let m = model(6);
    let g = er(9, 4);
    let q = Permutation::random(9, &mut Rng::new(2));
    let z = m.encode(&[g.clone(), permute_graph(&g, &q).unwrap()]).unwrap();
    let a = decode_canonical(&m, &z[0].mu).unwrap();
    let b = decode_canonical(&m, &z[1].mu).unwrap();
    assert_eq!(a.adjacency(), b.adjacency());
}

#[test]
fn interpolation_report_counts_pairs() {
    let m = model(7);
    let pairs: Vec<(Graph, Graph)> = (0..3).map(|s| (er(7, s), er(9, 10 + s))).collect();
    let (r, seqs) = interpolation_experiment(&m, &pairs, 4).unwrap();
    assert_eq!(r.pairs, 3);
    assert_eq!(seqs.len(), 3);
    assert!(seqs.iter().all(|s| s.len() == 4));
    assert!(r.consistent <= r.start_matches.min(r.end_matches));
}

fn clustered(n_per: usize, classes: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for c in 0..classes {
        for _ in 0..n_per {
            x.push(vec![c as f64 + 0.1 * rng.normal(), rng.normal(), rng.normal()]);
            y.push(c);
        }
    }
    (x, y)
}

#[test]
fn probe_separable_labels() {
    let (x, y) = clustered(20, 4, 1);
    let r = probe_classification(&x, &y, 5, 0, ProbeOptions::default()).unwrap();
    assert!(r.accuracy > 0.97, "{r:?}");
    assert_eq!(r.classes, 4);
    assert_eq!(r.fold_accuracy.len(), 5);
    assert!(r.stderr.is_some());
}

#[test]
fn probe_shuffled_labels_are_at_chance() {
    let (x, mut y) = clustered(30, 10, 2);
    Rng::new(8).shuffle(&mut y);
    let r = probe_classification(&x, &y, 5, 0, ProbeOptions::default()).unwrap();
    assert!((r.accuracy - 0.1).abs() < 0.07, "{r:?}");
}

#[test]
fn probe_rejects_degenerate_input() {
    let (x, y) = clustered(5, 2, 3);
    let opts = ProbeOptions::default();
    assert!(probe_classification(&x, &vec![0; x.len()], 5, 0, opts).is_err());
    assert!(probe_classification(&x, &y, 1, 0, opts).is_err());
    assert!(probe_classification(&x, &y[1..], 5, 0, opts).is_err());
    assert!(LogisticProbe::fit(&x, &vec![7; x.len()], 2, opts).is_err());
}

#[test]
fn probe_probabilities_are_normalized() {
    let (x, y) = clustered(10, 3, 4);
    let p = LogisticProbe::fit(&x, &y, 3, ProbeOptions::default()).unwrap();
    let pr = p.predict_proba(&x[0]);
    assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(p.predict(&x[0]), 0);
}

#[test]
fn embedding_export_shape_and_determinism() {
    let m = model(8);
    let graphs: Vec<Graph> = (0..7).map(|s| er(6, s).with_family(Family::ErdosRenyi { p: 0.5 })).collect();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    export_embeddings(&m, &graphs, &a).unwrap();
    export_embeddings(&m, &graphs, &b).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let mut r = csv::Reader::from_path(&a).unwrap();
    assert_eq!(r.headers().unwrap().len(), 3 + config().d_z);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 7);
    assert_eq!(&rows[3][0], "3");
    assert_eq!(&rows[3][1], "erdos_renyi");
}

#[test]
fn export_reports_io_errors() {
    let r = export_embeddings(&model(8), &[er(5, 0)], "/nonexistent-dir/x.csv");
    assert!(r.is_err());
}

#[test]
fn report_serializes_metrics_and_seeds() {
    let mut r = EvalReport::new("reconstruct", serde_json::json!({"graphs": 10}), vec![1, 2, 3]);
    r.insert("roc_auc", Metric::from_replicates(&[0.9, 0.92, 0.94]));
    r.insert("nll", Metric::single(12.5));
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(v["experiment"], "reconstruct");
    assert_eq!(v["seeds"], serde_json::json!([1, 2, 3]));
    assert!((v["metrics"]["roc_auc"]["value"].as_f64().unwrap() - 0.92).abs() < 1e-12);
    assert!((v["metrics"]["roc_auc"]["stderr"].as_f64().unwrap() - 0.02f64 / 3f64.sqrt()).abs() < 1e-12);
    assert_eq!(v["metrics"]["nll"]["value"], 12.5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    r.save(&path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), r.to_json().trim());
}

#[test]
fn svg_output_is_well_formed() {
    let s = svg::line_chart("GED <curve>", "edits", "distance", &[0.0, 1.0, 2.0], &[0.0, 0.5, 0.7]);
    assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
    assert!(s.contains("GED &lt;curve&gt;"));
    assert_eq!(s.matches("<circle").count(), 3);
    let g = svg::graph_rows("interp", &[vec![Graph::path(3), Graph::complete(4)]]);
    assert_eq!(g.matches("<line").count(), 2 + 6);
}
