use pigvae::graph::{gen_graph, pad_batch, permute_graph, write_dataset, EdgeFeatures, Family, Graph, PaddedBatch, Permutation};
use pigvae::model::{full_forward, Checkpoint, LatentMode, ModelConfig, ModelParams, PermMode};
use pigvae::rng::Rng;
use pigvae::train::*;
use pigvae::{Error, Tape, Tensor};
use proptest::prelude::*;

fn tiny() -> ModelConfig {
    ModelConfig { d_m: 16, d_z: 8, heads: 2, l_enc: 1, l_dec: 1, n_min: 1, n_max: 10, ..ModelConfig::default() }
}

fn er(n: usize, seed: u64) -> Graph {
    gen_graph(&Family::ErdosRenyi { p: 0.5 }, n, seed).unwrap()
}

fn batch(graphs: &[Graph]) -> PaddedBatch<f64> {
    pad_batch(graphs, false, EdgeFeatures::default()).unwrap()
}

fn recon(edge: Tensor<f64>, nodes: Tensor<f64>, b: &PaddedBatch<f64>) -> (f64, f64) {
    let mut tape = Tape::new();
    let e = tape.constant(edge);
    let n = tape.constant(nodes);
    let (re, rn) = reconstruction_loss(&mut tape, e, n, b).unwrap();
    (tape.value(re).data()[0], tape.value(rn).data()[0])
}

#[test]
fn zero_logits_cost_ln2_per_pair() {
    let b = batch(&[er(5, 1)]);
    let (re, rn) = recon(Tensor::zeros(&[1, 5, 5]), Tensor::zeros(&[1, 5, 1]), &b);
    assert!((re - 10.0 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!((re - 6.931).abs() < 1e-3);
    assert_eq!(rn, 0.0);
    // Padding and the diagonal do not contribute.
    let b2 = batch(&[er(5, 1), er(3, 2)]);
    let (re2, _) = recon(Tensor::zeros(&[2, 5, 5]), Tensor::zeros(&[2, 5, 1]), &b2);
    assert!((re2 - 13.0 * std::f64::consts::LN_2 / 2.0).abs() < 1e-12);
}

#[test]
fn saturated_logits_cost_nothing() {
    let g = er(6, 3);
    let b = batch(std::slice::from_ref(&g));
    let mut e = Tensor::zeros(&[1, 6, 6]);
    for i in 0..6 {
        for j in 0..6 {
            e.set(&[0, i, j], if g.has_edge(i, j) { 60.0 } else { -60.0 });
        }
    }
    let (re, _) = recon(e, Tensor::zeros(&[1, 6, 1]), &b);
    assert!(re < 1e-20);
}

#[test]
fn node_loss_is_categorical_cross_entropy() {
    let g = Graph::path(2).with_node_features(3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let b = batch(&[g]);
    let logits = Tensor::new(&[1, 2, 3], vec![0.0, 1.0, 2.0, 0.5, 0.5, 0.5]).unwrap();
    let (_, rn) = recon(Tensor::zeros(&[1, 2, 2]), logits, &b);
    let lse = (1.0f64.exp() + 2.0f64.exp() + 1.0).ln();
    assert!((rn - ((lse - 1.0) + 3.0f64.ln())).abs() < 1e-12);
}

#[test]
fn joint_relabeling_leaves_loss_unchanged() {
    let g = er(7, 4);
    let q = Permutation::new(vec![4, 6, 0, 2, 1, 5, 3]).unwrap();
    let gq = permute_graph(&g, &q).unwrap();
    let mut rng = Rng::new(3);
    let mut l = Tensor::zeros(&[1, 7, 7]);
    for i in 0..7 {
        for j in i..7 {
            let v = rng.normal();
            l.set(&[0, i, j], v);
            l.set(&[0, j, i], v);
        }
    }
    let mut lq = Tensor::zeros(&[1, 7, 7]);
    for i in 0..7 {
        for j in 0..7 {
            lq.set(&[0, i, j], l.at(&[0, q.mapping()[i], q.mapping()[j]]));
        }
    }
    let a = recon(l, Tensor::zeros(&[1, 7, 1]), &batch(&[g]));
    let b = recon(lq, Tensor::zeros(&[1, 7, 1]), &batch(&[gq]));
    assert!((a.0 - b.0).abs() < 1e-12);
}

#[test]
fn reconstruction_loss_rejects_mismatched_logits() {
    let b = batch(&[er(5, 1)]);
    let mut tape = Tape::new();
    let e = tape.constant(Tensor::zeros(&[1, 4, 4]));
    let n = tape.constant(Tensor::zeros(&[1, 5, 1]));
    assert!(reconstruction_loss(&mut tape, e, n, &b).is_err());
}

fn kl_tape(mu: &[f64], sigma: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let d = mu.len();
    let m = tape.constant(Tensor::new(&[1, d], mu.to_vec()).unwrap());
    let ls = tape.constant(Tensor::new(&[1, d], sigma.iter().map(|s| s.ln()).collect()).unwrap());
    let s = tape.exp(ls).unwrap();
    let k = kl_loss(&mut tape, m, s, ls).unwrap();
    tape.value(k).data()[0]
}

#[test]
fn kl_examples() {
    assert!(kl_tape(&[0.0, 0.0], &[1.0, 1.0]).abs() < 1e-15);
    assert!((kl_tape(&[1.0], &[1.0]) - 0.5).abs() < 1e-15);
    let e = std::f64::consts::E;
    assert!((kl_tape(&[0.0], &[e]) - 0.5 * (e * e - 3.0)).abs() < 1e-12);
    assert!((kl_tape(&[0.0], &[e]) - 2.1945).abs() < 1e-4);
    assert_eq!(kl_divergence(&[1.0], &[1.0]), 0.5);
}

#[test]
fn kl_is_never_negative() {
    let mut rng = Rng::new(10);
    for _ in 0..10_000 {
        let d = 1 + rng.below(8);
        let mu: Vec<f64> = (0..d).map(|_| 3.0 * rng.normal()).collect();
        let sigma: Vec<f64> = (0..d).map(|_| (2.0 * rng.normal()).exp()).collect();
        assert!(kl_divergence(&mu, &sigma) >= -1e-12);
        assert!(kl_tape(&mu, &sigma) >= -1e-9);
    }
}

fn losses(params: &ModelParams<f64>, b: &PaddedBatch<f64>, w: LossWeights, mode: PermMode) -> LossBreakdown {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false).unwrap();
    let (_, v) = total_loss(&mut tape, &p, params.config(), b, w, LatentMode::Sample(5), mode).unwrap();
    v.values(&tape)
}

#[test]
fn total_loss_breakdown() {
    let cfg = tiny();
    let params = ModelParams::<f64>::init(&cfg, 1).unwrap();
    let b = batch(&[er(6, 1), er(9, 2)]);
    let w = LossWeights { beta: 0.3, lambda: 0.1, gamma: 1.0 };
    let l = losses(&params, &b, w, PermMode::Soft);
    let sum = l.recon_edges + l.recon_nodes + 0.3 * l.kl + 0.1 * l.perm_entropy + l.count_loss;
    assert!((l.total - sum).abs() < 1e-6);
    assert!(l.perm_entropy > 0.0 && l.kl >= 0.0 && l.count_loss > 0.0);
    let bare = losses(&params, &b, LossWeights { beta: 0.0, lambda: 0.0, gamma: 0.0 }, PermMode::Soft);
    assert_eq!(bare.total, bare.recon_edges + bare.recon_nodes);
    let hard = losses(&params, &b, w, PermMode::Hard);
    assert!(hard.perm_entropy.abs() < 1e-12);
}

#[test]
fn count_loss_rejects_unsupported_sizes() {
    let cfg = ModelConfig { n_min: 4, ..tiny() };
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(Tensor::zeros(&[1, cfg.count_classes()]));
    assert!(count_loss(&mut tape, logits, &[3], &cfg).is_err());
    let l = count_loss(&mut tape, logits, &[4], &cfg).unwrap();
    assert!((tape.value(l).data()[0] - (cfg.count_classes() as f64).ln()).abs() < 1e-12);
}

#[test]
fn warmup_schedule() {
    let tc = TrainConfig { beta: 0.5, steps: 100, ..TrainConfig::default() };
    assert_eq!(tc.warmup_steps(), 20);
    assert!((tc.beta_at(0) - 0.025).abs() < 1e-15);
    assert_eq!(tc.beta_at(19), 0.5);
    assert_eq!(tc.beta_at(80), 0.5);
    let none = TrainConfig { kl_warmup_steps: Some(0), ..tc.clone() };
    assert_eq!(none.beta_at(0), 0.5);
    assert!(TrainConfig { lambda: -1.0, ..tc.clone() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..tc }.validate().is_err());
}

#[test]
fn cosine_learning_rate() {
    let tc = TrainConfig { lr: 1e-3, steps: 100, ..TrainConfig::default() };
    assert_eq!(tc.lr_at(50), 1e-3);
    let cos = TrainConfig { lr_decay: true, ..tc };
    assert_eq!(cos.lr_at(0), 1e-3);
    assert!((cos.lr_at(50) - 5e-4).abs() < 1e-15);
    assert!((cos.lr_at(25) - 1e-3 * (2.0 + 2f64.sqrt()) / 4.0).abs() < 1e-15);
    assert!(cos.lr_at(100).abs() < 1e-15);
    assert!(cos.lr_at(150).abs() < 1e-15);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let graphs: Vec<Graph> = (0..8).map(|s| er(5 + s % 4, s as u64)).collect();
    let tc = TrainConfig { lr: 0.0, batch_size: 4, steps: 3, ..TrainConfig::default() };
    let mut t = Trainer::<f32>::new(&tiny(), &tc, graphs).unwrap();
    let before = t.params.clone();
    for _ in 0..3 {
        t.train_step().unwrap();
    }
    assert_eq!(t.params, before);
    assert_eq!(t.step(), 3);
}

#[test]
fn single_graph_is_memorized() {
    // seed 9 gives a graph with a trivial automorphism group
    let g = er(6, 9);
    let cfg = ModelConfig { d_z: 32, l_enc: 3, ..tiny() };
    let tc = TrainConfig { lr: 3e-3, batch_size: 8, steps: 400, ..TrainConfig::default() };
    let mut t = Trainer::<f32>::new(&cfg, &tc, vec![g; 8]).unwrap();
    let first = t.train_step().unwrap().total;
    let mut last = first;
    for _ in 1..400 {
        last = t.train_step().unwrap().total;
    }
    assert!(last < 0.1 * first, "initial {first}, final {last}");
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let graphs: Vec<Graph> = (0..12).map(|s| er(4 + s % 6, s as u64)).collect();
    let tc = TrainConfig { batch_size: 4, steps: 10, seed: 7, ..TrainConfig::default() };
    let run = || {
        let mut t = Trainer::<f32>::new(&tiny(), &tc, graphs.clone()).unwrap();
        let l: Vec<u64> = (0..10).map(|_| t.train_step().unwrap().total.to_bits()).collect();
        (l, t.params)
    };
    assert_eq!(run(), run());
}

#[test]
fn batches_cover_each_epoch() {
    let graphs: Vec<Graph> = (0..10).map(|s| er(5, s)).collect();
    let tc = TrainConfig { batch_size: 4, ..TrainConfig::default() };
    let t = Trainer::<f32>::new(&tiny(), &tc, graphs).unwrap();
    let mut first_epoch: Vec<usize> = (0..2).flat_map(|s| t.batch_indices(s)).collect();
    first_epoch.extend(&t.batch_indices(2)[..2]);
    first_epoch.sort();
    assert_eq!(first_epoch, (0..10).collect::<Vec<_>>());
}

#[test]
fn non_finite_forward_is_reported() {
    let cfg = tiny();
    let mut params = ModelParams::<f32>::init(&cfg, 0).unwrap();
    *params.get_mut("enc.logsigma.b").unwrap() = Tensor::full(&[8], 200.0);
    let mut adam = Adam::new(1e-3, 5.0);
    let b = pad_batch::<f32>(&[er(5, 0)], false, EdgeFeatures::default()).unwrap();
    let w = LossWeights { beta: 1.0, lambda: 0.1, gamma: 1.0 };
    let err = train_step(&mut params, &mut adam, &b, w, 0).unwrap_err();
    assert!(matches!(err, Error::NonFinite { step: 0, .. }), "{err}");
}

#[test]
fn rejects_graphs_outside_the_count_support() {
    let tc = TrainConfig::default();
    assert!(Trainer::<f32>::new(&tiny(), &tc, vec![er(11, 0)]).is_err());
    assert!(Trainer::<f32>::new(&tiny(), &tc, vec![]).is_err());
}

#[test]
fn adam_state_round_trips_through_checkpoint() {
    let graphs: Vec<Graph> = (0..6).map(|s| er(6, s)).collect();
    let tc = TrainConfig { batch_size: 3, steps: 6, seed: 2, ..TrainConfig::default() };
    let mut a = Trainer::<f32>::new(&tiny(), &tc, graphs.clone()).unwrap();
    for _ in 0..3 {
        a.train_step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");
    a.checkpoint().save(&path).unwrap();
    let mut b = Trainer::<f32>::new(&tiny(), &tc, graphs).unwrap();
    b.restore(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(b.step(), 3);
    for _ in 0..3 {
        assert_eq!(a.train_step().unwrap(), b.train_step().unwrap());
    }
    assert_eq!(a.params, b.params);
}

#[test]
fn fit_logs_every_step_and_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let graphs: Vec<Graph> = (0..10).map(|s| er(4 + s % 5, s as u64)).collect();
    write_dataset(&data, &graphs).unwrap();
    let cfg = tiny();
    let tc = TrainConfig { batch_size: 4, steps: 6, checkpoint_every: 3, seed: 1, ..TrainConfig::default() };

    let straight = dir.path().join("straight");
    let report = fit(&data, &cfg, &tc, &straight, false, |_, _| {}).unwrap();
    assert_eq!(report.steps, 6);
    let log = std::fs::read_to_string(&report.metrics).unwrap();
    assert_eq!(log.lines().count(), 7);
    assert_eq!(log.lines().next().unwrap(), LossBreakdown::CSV_HEADER);
    assert!(straight.join(FINAL_CHECKPOINT).exists());
    assert!(!straight.join(LATEST_CHECKPOINT).exists());

    // Stop after three steps, then resume to six.
    let split = dir.path().join("split");
    let short = TrainConfig { steps: 3, ..tc.clone() };
    fit(&data, &cfg, &short, &split, false, |_, _| {}).unwrap();
    let mut seen = Vec::new();
    let resumed = fit(&data, &cfg, &tc, &split, true, |s, _| seen.push(s)).unwrap();
    assert_eq!(resumed.resumed_from, Some(3));
    assert_eq!(seen, vec![3, 4, 5]);
    assert_eq!(std::fs::read_to_string(split.join(METRICS_FILE)).unwrap(), log);
    let a = Checkpoint::load(straight.join(FINAL_CHECKPOINT)).unwrap();
    let b = Checkpoint::load(split.join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(a.params, b.params);
    assert!(fit(dir.path().join("missing.jsonl"), &cfg, &tc, dir.path().join("x"), false, |_, _| {}).is_err());
}

#[test]
fn full_forward_soft_permutations_are_doubly_stochastic() {
    let cfg = tiny();
    let params = ModelParams::<f64>::init(&cfg, 4).unwrap();
    let b = batch(&[er(6, 1), er(4, 2)]);
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false).unwrap();
    let f = full_forward(&mut tape, &p, &cfg, &b, LatentMode::Mean, PermMode::Soft).unwrap();
    let perm = tape.value(f.perm);
    for (g, &s) in b.sizes().iter().enumerate() {
        for r in 0..s {
            let row: f64 = (0..6).map(|c| perm.at(&[g, r, c])).sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_matches_closed_form(mu in prop::collection::vec(-4.0f64..4.0, 1..6), seed in 0u64..100) {
        let mut rng = Rng::new(seed);
        let sigma: Vec<f64> = mu.iter().map(|_| (rng.normal()).exp()).collect();
        prop_assert!((kl_tape(&mu, &sigma) - kl_divergence(&mu, &sigma)).abs() < 1e-9);
    }
}
