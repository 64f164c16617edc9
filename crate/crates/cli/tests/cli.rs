use std::path::Path;
use std::process::{Command, Output};

fn pigvae(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pigvae")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const ER: &[&str] =
    &["gen-data", "--family", "erdos_renyi", "--p", "0.5", "--n-min", "5", "--n-max", "8", "--count", "40", "--seed", "1"];

fn gen(dir: &Path, name: &str) -> Output {
    let mut args = ER.to_vec();
    args.extend(["--out", name]);
    pigvae(&args, dir)
}

const TINY: &[&str] = &[
    "--d-m", "8", "--d-z", "4", "--heads", "2", "--l-enc", "1", "--l-dec", "1", "--model-n-max", "8", "--batch-size", "4",
];

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let o = gen(dir.path(), "a.jsonl");
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("wrote 40 graphs"));
    gen(dir.path(), "b.jsonl");
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 41);
    let snap = json(&dir.path().join("a.config.json"));
    assert_eq!(snap["command"], "gen-data");
    assert_eq!(snap["generate"]["count"], 40);
}

#[test]
fn gen_data_from_snapshot_alone() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "a.jsonl");
    let o = pigvae(&["gen-data", "--config", "a.config.json", "--out", "c.jsonl"], dir.path());
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(std::fs::read(dir.path().join("a.jsonl")).unwrap(), std::fs::read(dir.path().join("c.jsonl")).unwrap());
}

#[test]
fn gen_data_mix10_and_classes() {
    let dir = tempfile::tempdir().unwrap();
    let o = pigvae(
        &["gen-data", "--family", "mix10", "--n-min", "12", "--n-max", "20", "--count", "20", "--out", "mix.jsonl"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{o:?}");
    for name in ["erdos_renyi", "barabasi_albert", "dual_ba", "powerlaw_tree"] {
        assert!(stdout(&o).contains(name), "{name} missing");
    }
    let classes = r#"[{"family":"erdos_renyi","params":{"p":0.2}},{"family":"barabasi_albert","params":{"m":2}}]"#;
    let o = pigvae(&["gen-data", "--classes", classes, "--count", "10", "--out", "cls.jsonl"], dir.path());
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("      5  barabasi_albert {\"m\":2}"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pigvae(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&pigvae(&["gen-data", "--family", "nope", "--out", "x.jsonl"], dir.path())), 1);
    assert_eq!(code(&pigvae(&["gen-data", "--out", "x.jsonl"], dir.path())), 1);
    assert_eq!(code(&pigvae(&["train", "--data", "x.jsonl"], dir.path())), 1);
    assert_eq!(code(&pigvae(&["check", "--precision", "16"], dir.path())), 1);
    assert_eq!(code(&pigvae(&["--help"], dir.path())), 0);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pigvae(&["train", "--data", "missing.jsonl", "--out", "run"], dir.path())), 2);
    std::fs::write(dir.path().join("bad.jsonl"), "not a dataset\n").unwrap();
    let o = pigvae(&["train", "--data", "bad.jsonl", "--out", "run", "--steps", "1"], dir.path());
    assert_eq!(code(&o), 2, "{o:?}");
    let o = pigvae(
        &["eval", "--exp", "invariance", "--checkpoint", "none.ckpt", "--data", "bad.jsonl", "--out", "e"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn train_smoke_resume_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "er.jsonl");
    let mut args = vec!["train", "--data", "er.jsonl", "--out", "run", "--steps", "50", "--log-every", "25"];
    args.extend(TINY);
    let o = pigvae(&args, dir.path());
    assert_eq!(code(&o), 0, "{o:?}");
    let run = dir.path().join("run");
    let ckpts: Vec<_> = std::fs::read_dir(&run)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ckpt"))
        .collect();
    assert_eq!(ckpts.len(), 1);
    assert_eq!(std::fs::read_to_string(run.join("metrics.csv")).unwrap().lines().count(), 51);
    let snap = json(&run.join("run_config.json"));
    assert_eq!(snap["train"]["steps"], 50);
    assert_eq!(snap["model"]["d_m"], 8);

    // Extending the run continues the step numbering.
    let o = pigvae(&["train", "--config", "run/run_config.json", "--steps", "60", "--resume"], dir.path());
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("resumed at step 50"));
    let log = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(log.lines().count(), 61);
    assert!(log.lines().last().unwrap().starts_with("59,"));

    let ck = "run/model.ckpt";
    let o = pigvae(&["eval", "--exp", "invariance", "--checkpoint", ck, "--data", "er.jsonl", "--out", "ev"], dir.path());
    assert_eq!(code(&o), 0, "{o:?}");
    let r = json(&dir.path().join("ev/invariance.json"));
    assert_eq!(r["passed"], true);
    assert!(r["metrics"]["max_deviation"]["value"].as_f64().unwrap() < 1e-5);

    let o = pigvae(
        &["eval", "--exp", "reconstruct", "--checkpoint", ck, "--checkpoint", ck, "--data", "er.jsonl", "--out", "ev"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let r = json(&dir.path().join("ev/reconstruct.json"));
    for m in ["roc_auc", "nll", "baseline_nll"] {
        assert!(r["metrics"][m]["value"].is_number(), "{m}");
        assert_eq!(r["metrics"][m]["stderr"], 0.0, "{m}");
    }

    let o = pigvae(
        &["eval", "--exp", "interpolate", "--steps", "8", "--pairs", "1", "--checkpoint", ck, "--data", "er.jsonl", "--out", "ev"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let seq = std::fs::read_to_string(dir.path().join("ev/interpolation.jsonl")).unwrap();
    assert_eq!(seq.lines().count(), 1 + 8);
    assert!(std::fs::read_to_string(dir.path().join("ev/interpolation.svg")).unwrap().starts_with("<svg"));

    for exp in ["equivariance", "ged", "isomorphism"] {
        let mut a = vec!["eval", "--exp", exp, "--checkpoint", ck, "--data", "er.jsonl", "--out", "ev"];
        a.extend(["--max-edits", "3", "--replicates", "2"]);
        let o = pigvae(&a, dir.path());
        assert_eq!(code(&o), 0, "{exp}: {o:?}");
        assert!(dir.path().join(format!("ev/{exp}.json")).exists());
    }
    assert!(dir.path().join("ev/ged.csv").exists());
    assert!(dir.path().join("ev/ged.svg").exists());

    let o = pigvae(&["embed", "--checkpoint", ck, "--data", "er.jsonl", "--out", "emb"], dir.path());
    assert_eq!(code(&o), 0, "{o:?}");
    let csv = std::fs::read_to_string(dir.path().join("emb/embeddings.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 3 + 4);

    let o = pigvae(&["eval", "--exp", "nonsense", "--checkpoint", ck, "--data", "er.jsonl", "--out", "ev"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn probe_needs_several_classes() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "er.jsonl");
    let mut args = vec!["train", "--data", "er.jsonl", "--out", "run", "--steps", "2"];
    args.extend(TINY);
    assert_eq!(code(&pigvae(&args, dir.path())), 0);
    let o = pigvae(
        &["eval", "--exp", "probe", "--checkpoint", "run/model.ckpt", "--data", "er.jsonl", "--out", "ev"],
        dir.path(),
    );
    assert_eq!(code(&o), 2, "{o:?}");
    let classes = r#"[{"family":"erdos_renyi","params":{"p":0.2}},{"family":"erdos_renyi","params":{"p":0.8}}]"#;
    let o = pigvae(&["gen-data", "--classes", classes, "--n-min", "5", "--n-max", "8", "--count", "40", "--out", "two.jsonl"], dir.path());
    assert_eq!(code(&o), 0);
    let o = pigvae(
        &["eval", "--exp", "probe", "--checkpoint", "run/model.ckpt", "--data", "two.jsonl", "--out", "ev"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let r = json(&dir.path().join("ev/probe.json"));
    assert_eq!(r["metrics"]["classes"]["value"], 2.0);
}

#[test]
fn check_reports_properties_and_catches_the_mutation() {
    let dir = tempfile::tempdir().unwrap();
    let o = pigvae(&["check", "--precision", "32", "--out", "props.json"], dir.path());
    assert_eq!(code(&o), 0, "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("encoder.invariance") && !text.contains("FAIL"));
    assert!(json(&dir.path().join("props.json")).as_array().unwrap().iter().all(|r| r["passed"] == true));

    let o = pigvae(&["check", "--precision", "32", "--inject-softsort-sign-error"], dir.path());
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("softsort.limit"));
}

#[test]
fn check_at_64_bits_runs_gradient_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = pigvae(&["check", "--precision", "64"], dir.path());
    assert_eq!(code(&o), 0, "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("gradients.ops") && text.contains("gradients.end_to_end"));
}
