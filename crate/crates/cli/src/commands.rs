use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pigvae::eval::properties::{run_all, PropertyResult};
use pigvae::eval::{self, svg, EvalReport, Metric, ProbeOptions};
use pigvae::graph::{generate_dataset, read_dataset, write_dataset, DatasetSpec, Family, Graph};
use pigvae::model::{Checkpoint, Model};
use pigvae::train::fit;
use serde_json::{json, Value};

use crate::config::{set, DataConfig, RunConfig, SNAPSHOT_FILE};
use crate::{CheckArgs, EmbedArgs, EvalArgs, Failure, GenDataArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn family_params(a: &GenDataArgs) -> Result<Value, Failure> {
    let mut params = match &a.params {
        Some(text) => serde_json::from_str(text).map_err(|e| Failure::usage(format!("--params: {e}")))?,
        None => json!({}),
    };
    let obj = params.as_object_mut().ok_or_else(|| Failure::usage("--params must be a JSON object"))?;
    let mut put = |key: &str, v: Option<Value>| {
        if let Some(v) = v {
            obj.insert(key.into(), v);
        }
    };
    put("p", a.p.map(Value::from));
    put("m", a.m.map(Value::from));
    put("radius", a.radius.map(Value::from));
    put("d", a.d.map(Value::from));
    put("gamma", a.gamma.map(Value::from));
    put("k", a.k.map(Value::from));
    put("q", a.q.map(Value::from));
    put("m1", a.m1.map(Value::from));
    put("m2", a.m2.map(Value::from));
    Ok(params)
}

fn family_key(g: &Graph) -> Option<String> {
    g.family().map(|f| format!("{} {}", f.name(), f.params_json()))
}

pub fn gen_data(a: GenDataArgs, threads: Option<usize>) -> Result<(), Failure> {
    let mut cfg = RunConfig::base(a.config.as_deref(), "gen-data")?;
    set(&mut cfg.threads, threads);
    set(&mut cfg.out, a.out.clone().map(Some));
    let spec = if let Some(text) = &a.classes {
        let classes: Vec<Family> =
            serde_json::from_str(text).map_err(|e| Failure::usage(format!("--classes: {e}")))?;
        if classes.is_empty() {
            return Err(Failure::usage("--classes needs at least one family"));
        }
        Some(DatasetSpec::Classes(classes))
    } else if let Some(name) = &a.family {
        if name == "mix10" {
            Some(DatasetSpec::Mix10)
        } else {
            Some(DatasetSpec::Single(Family::from_parts(name, family_params(&a)?).map_err(|e| Failure::usage(e.to_string()))?))
        }
    } else {
        None
    };
    let gen = match (cfg.generate.take(), spec) {
        (Some(mut g), spec) => {
            set(&mut g.spec, spec);
            g
        }
        (None, Some(spec)) => DataConfig { spec, n_min: 12, n_max: 20, count: 1000, seed: 0 },
        (None, None) => return Err(Failure::usage("--family or --classes is required")),
    };
    let mut gen = gen;
    set(&mut gen.n_min, a.n_min);
    set(&mut gen.n_max, a.n_max);
    set(&mut gen.count, a.count);
    set(&mut gen.seed, a.seed);
    let out = cfg.out()?.to_path_buf();
    let graphs = generate_dataset(&gen.spec, gen.n_min, gen.n_max, gen.count, gen.seed)
        .map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_dataset(&out, &graphs)?;
    cfg.generate = Some(gen);
    cfg.save(&out.with_extension("config.json"))?;
    let mut hist: BTreeMap<String, usize> = BTreeMap::new();
    for g in &graphs {
        *hist.entry(family_key(g).unwrap_or_default()).or_default() += 1;
    }
    println!("wrote {} graphs to {}", graphs.len(), out.display());
    for (k, v) in hist {
        println!("  {v:>7}  {k}");
    }
    Ok(())
}

pub fn train(a: TrainArgs, threads: Option<usize>) -> Result<(), Failure> {
    let mut cfg = RunConfig::base(a.config.as_deref(), "train")?;
    set(&mut cfg.threads, threads);
    set(&mut cfg.data, a.data.map(Some));
    set(&mut cfg.out, a.out.map(Some));
    let m = &mut cfg.model;
    set(&mut m.d_m, a.model.d_m);
    set(&mut m.d_z, a.model.d_z);
    set(&mut m.heads, a.model.heads);
    set(&mut m.l_enc, a.model.l_enc);
    set(&mut m.l_dec, a.model.l_dec);
    set(&mut m.tau, a.model.tau);
    set(&mut m.n_min, a.model.model_n_min);
    set(&mut m.n_max, a.model.model_n_max);
    let t = &mut cfg.train;
    set(&mut t.beta, a.beta);
    set(&mut t.kl_warmup_steps, a.kl_warmup_steps.map(Some));
    set(&mut t.lambda, a.lambda);
    set(&mut t.gamma, a.gamma);
    set(&mut t.lr, a.lr);
    set(&mut t.lr_decay, a.lr_decay);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.steps, a.steps);
    set(&mut t.seed, a.seed);
    set(&mut t.checkpoint_every, a.checkpoint_every);
    set(&mut t.clip_norm, a.clip_norm);
    cfg.model.validate()?;
    cfg.train.validate()?;
    let (data, out) = (cfg.data()?.to_path_buf(), cfg.out()?.to_path_buf());
    if !data.exists() {
        return Err(Failure::data(format!("dataset {} not found", data.display())));
    }
    create_dir(&out)?;
    cfg.save(&out.join(SNAPSHOT_FILE))?;
    let every = a.log_every;
    let report = fit(&data, &cfg.model, &cfg.train, &out, a.resume, |step, l| {
        if every > 0 && (step + 1) % every == 0 {
            eprintln!(
                "step {:>6}  total {:.4}  edges {:.4}  kl {:.3}  perm {:.4}  count {:.4}",
                step + 1,
                l.total,
                l.recon_edges,
                l.kl,
                l.perm_entropy,
                l.count_loss
            );
        }
    })?;
    if let Some(from) = report.resumed_from {
        println!("resumed at step {from}");
    }
    println!("trained {} steps; checkpoint {}", report.steps, report.checkpoint.display());
    println!("metrics {}", report.metrics.display());
    Ok(())
}

fn load_models(paths: &[PathBuf]) -> Result<(Vec<Model<f32>>, Vec<u64>), Failure> {
    if paths.is_empty() {
        return Err(Failure::usage("--checkpoint is required"));
    }
    let mut models = Vec::new();
    let mut seeds = Vec::new();
    for p in paths {
        let ck = Checkpoint::load(p)?;
        if let Some(seed) = ck.state.as_ref().and_then(|s| s["train"]["seed"].as_u64()) {
            seeds.push(seed);
        }
        models.push(Model::new(ck.params));
    }
    Ok((models, seeds))
}

fn load_graphs(cfg: &RunConfig) -> Result<Vec<Graph>, Failure> {
    let mut graphs = read_dataset(cfg.data()?)?;
    if let Some(limit) = cfg.eval.limit {
        graphs.truncate(limit);
    }
    if graphs.is_empty() {
        return Err(Failure::data("dataset is empty"));
    }
    Ok(graphs)
}

fn replicated(report: &mut EvalReport, name: &str, values: &[f64]) {
    report.insert(name, Metric::from_replicates(values));
}

pub fn eval(a: EvalArgs, threads: Option<usize>) -> Result<(), Failure> {
    let mut cfg = RunConfig::base(a.config.as_deref(), "eval")?;
    set(&mut cfg.threads, threads);
    set(&mut cfg.data, a.data.map(Some));
    set(&mut cfg.out, a.out.map(Some));
    let e = &mut cfg.eval;
    if !a.checkpoints.is_empty() {
        e.checkpoints = a.checkpoints;
    }
    set(&mut e.experiment, a.exp.map(Some));
    set(&mut e.limit, a.limit.map(Some));
    set(&mut e.seed, a.seed);
    set(&mut e.permutations, a.permutations);
    set(&mut e.max_edits, a.max_edits);
    set(&mut e.replicates, a.replicates);
    set(&mut e.steps, a.steps);
    set(&mut e.pairs, a.pairs);
    set(&mut e.folds, a.folds);
    let exp = cfg.eval.experiment.clone().ok_or_else(|| Failure::usage("--exp is required"))?;
    run_experiment(&cfg, &exp)
}

fn run_experiment(cfg: &RunConfig, exp: &str) -> Result<(), Failure> {
    const EXPERIMENTS: [&str; 8] =
        ["reconstruct", "invariance", "equivariance", "ged", "isomorphism", "interpolate", "probe", "embed"];
    if !EXPERIMENTS.contains(&exp) {
        return Err(Failure::usage(format!("unknown experiment `{exp}`; expected one of {}", EXPERIMENTS.join(", "))));
    }
    let out = cfg.out()?.to_path_buf();
    let e = &cfg.eval;
    let (models, train_seeds) = load_models(&e.checkpoints)?;
    let graphs = load_graphs(cfg)?;
    create_dir(&out)?;
    cfg.save(&out.join(format!("{exp}.config.json")))?;
    let params = serde_json::to_value(e).expect("serializes");
    let mut seeds = train_seeds;
    seeds.push(e.seed);
    let mut report = EvalReport::new(exp, params, seeds);
    let model = &models[0];
    match exp {
        "reconstruct" => {
            let runs: Vec<_> = models.iter().map(|m| eval::reconstruction_metrics(m, &graphs)).collect::<Result<_, _>>()?;
            let col = |f: &dyn Fn(&eval::ReconstructionMetrics) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
            if runs.iter().all(|r| r.roc_auc.is_some()) {
                replicated(&mut report, "roc_auc", &col(&|r| r.roc_auc.unwrap_or(f64::NAN)));
            }
            replicated(&mut report, "nll", &col(&|r| r.nll));
            replicated(&mut report, "baseline_nll", &col(&|r| r.baseline_nll));
            replicated(&mut report, "nll_ratio", &col(&|r| r.nll / r.baseline_nll));
            replicated(&mut report, "edge_accuracy", &col(&|r| r.edge_accuracy));
            replicated(&mut report, "exact_fraction", &col(&|r| r.exact_fraction));
            replicated(&mut report, "perm_entropy", &col(&|r| r.perm_entropy));
            replicated(&mut report, "valid_permutation_fraction", &col(&|r| r.valid_permutation_fraction));
            replicated(&mut report, "count_accuracy", &col(&|r| r.count_accuracy));
            report.passed = Some(runs.iter().all(|r| r.roc_auc.unwrap_or(0.0) >= 0.9 && r.nll <= 0.5 * r.baseline_nll));
        }
        "invariance" => {
            let dev = eval::invariance_audit(model, &graphs, e.permutations, e.seed)?;
            report.insert("max_deviation", Metric::single(dev));
            report.passed = Some(dev < 1e-5);
        }
        "equivariance" => {
            let r = eval::equivariance_audit(model, &graphs, e.seed)?;
            report.insert("pass_fraction", Metric::single(r.pass_fraction()));
            report.insert("tie_free_cases", Metric::single(r.tie_free() as f64));
            report.insert("tied_cases", Metric::single(r.tied as f64));
            report.passed = Some(r.passed == r.tie_free());
        }
        "ged" => {
            let c = eval::ged_curve(model, &graphs, e.max_edits, e.replicates, e.seed)?;
            let mut csv = String::from("step,mean_distance,stderr\n");
            for k in 0..c.steps.len() {
                csv.push_str(&format!("{},{},{}\n", c.steps[k], c.mean_distance[k], c.stderr[k]));
            }
            write_file(&out.join("ged.csv"), &csv)?;
            let xs: Vec<f64> = c.steps.iter().map(|&s| s as f64).collect();
            let chart = svg::line_chart("Latent distance vs. edit steps", "edit steps", "mean distance", &xs, &c.mean_distance);
            write_file(&out.join("ged.svg"), &chart)?;
            if let Some(rho) = c.spearman {
                report.insert("spearman", Metric::single(rho));
            }
            report.insert("control_max", Metric::single(c.control_max));
            report.insert("base_graphs", Metric::single(c.base_graphs as f64));
            report.passed = Some(c.spearman.unwrap_or(0.0) >= 0.9 && c.control_max < 1e-5);
        }
        "isomorphism" => {
            let r = eval::isomorphism_test(model, &graphs, e.seed)?;
            report.insert("max_isomorphic_distance", Metric::single(r.max_isomorphic_distance));
            report.insert("min_edit_distance", Metric::single(r.min_edit_distance));
            report.insert("separation_rate", Metric::single(r.separation_rate));
            report.insert("isomorphic_match_rate", Metric::single(r.isomorphic_match_rate));
            report.insert("verified_isomorphic", Metric::single(r.verified_isomorphic as f64));
            report.passed = Some(r.isomorphic_match_rate == 1.0 && r.separation_rate >= 0.95);
        }
        "interpolate" => {
            let pairs: Vec<(Graph, Graph)> =
                graphs.chunks_exact(2).take(e.pairs).map(|c| (c[0].clone(), c[1].clone())).collect();
            if pairs.is_empty() {
                return Err(Failure::data("interpolation needs at least two graphs"));
            }
            let (r, seqs) = eval::interpolation_experiment(model, &pairs, e.steps)?;
            let flat: Vec<Graph> = seqs.iter().flatten().cloned().collect();
            write_dataset(out.join("interpolation.jsonl"), &flat)?;
            let shown: Vec<Vec<Graph>> = seqs.iter().take(10).cloned().collect();
            write_file(&out.join("interpolation.svg"), &svg::graph_rows("Latent interpolation", &shown))?;
            report.insert("endpoint_consistency", Metric::single(r.consistency()));
            report.insert("start_matches", Metric::single(r.start_matches as f64));
            report.insert("end_matches", Metric::single(r.end_matches as f64));
            report.insert("pairs", Metric::single(r.pairs as f64));
            report.passed = Some(r.consistency() >= 0.9);
        }
        "probe" => {
            let keys: Vec<String> = graphs
                .iter()
                .map(|g| family_key(g).ok_or_else(|| Failure::data("probe needs graphs with family labels")))
                .collect::<Result<_, _>>()?;
            let mut classes: Vec<&String> = keys.iter().collect();
            classes.sort();
            classes.dedup();
            let labels: Vec<usize> = keys.iter().map(|k| classes.binary_search(&k).expect("present")).collect();
            let z: Vec<Vec<f64>> = model.encode(&graphs)?.into_iter().map(|c| c.mu).collect();
            let r = eval::probe_classification(&z, &labels, e.folds, e.seed, ProbeOptions::default())?;
            let chance = 1.0 / r.classes as f64;
            report.insert("accuracy", Metric { value: r.accuracy, stderr: r.stderr });
            report.insert("chance", Metric::single(chance));
            report.insert("classes", Metric::single(r.classes as f64));
            report.passed = Some(r.accuracy >= 0.6 && r.accuracy >= 6.0 * chance);
        }
        "embed" => {
            let path = out.join("embeddings.csv");
            eval::export_embeddings(model, &graphs, &path)?;
            report.insert("rows", Metric::single(graphs.len() as f64));
        }
        _ => unreachable!("checked above"),
    }
    let path = out.join(format!("{exp}.json"));
    report.save(&path)?;
    println!("{}", report.to_json());
    match report.passed {
        Some(false) => eprintln!("{exp}: FAIL"),
        Some(true) => eprintln!("{exp}: PASS"),
        None => {}
    }
    Ok(())
}

pub fn embed(a: EmbedArgs, threads: Option<usize>) -> Result<(), Failure> {
    let mut cfg = RunConfig::base(a.config.as_deref(), "embed")?;
    set(&mut cfg.threads, threads);
    set(&mut cfg.data, a.data.map(Some));
    set(&mut cfg.out, a.out.map(Some));
    if let Some(ck) = a.checkpoint {
        cfg.eval.checkpoints = vec![ck];
    }
    set(&mut cfg.eval.limit, a.limit.map(Some));
    cfg.eval.experiment = Some("embed".into());
    run_experiment(&cfg, "embed")
}

fn print_table(rows: &[PropertyResult]) {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in rows {
        println!(
            "{:<width$}  {}  {:>11.3e}  (threshold {:.0e})  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.value,
            r.threshold,
            r.detail
        );
    }
}

pub fn check(a: CheckArgs) -> Result<(), Failure> {
    pigvae::perm::inject_softsort_sign_error(a.inject_softsort_sign_error);
    let rows = run_all(a.precision, a.seed)?;
    if a.precision != 64 {
        println!("gradient checks need --precision 64; skipped");
    }
    print_table(&rows);
    if let Some(path) = &a.out {
        let text = serde_json::to_string_pretty(&rows).expect("serializes");
        write_file(path, &(text + "\n"))?;
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::property(format!("failed properties: {}", failed.join(", "))))
    }
}
