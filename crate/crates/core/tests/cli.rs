use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_consistyle");

fn run(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = run(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synthetic(cwd: &Path) {
    ok(cwd, &["make-synthetic", "--out-dir", "syn"]);
}

fn entries(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn evaluate_identity_is_100() {
    let d = TempDir::new().unwrap();
    synthetic(d.path());
    let out = ok(
        d.path(),
        &[
            "evaluate",
            "--out-dir",
            "ev",
            "--hyp",
            "syn/test.formal.ref0",
            "--refs",
            "syn/test.formal.ref0",
            "syn/test.formal.ref1",
            "syn/test.formal.ref2",
            "syn/test.formal.ref3",
        ],
    );
    let first: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(first["bleu"], 100.0);
    assert!(d.path().join("ev/manifest.json").exists());
    assert!(d.path().join("ev/report.json").exists());
}

#[test]
fn evaluate_with_classifier_reports_hm() {
    let d = TempDir::new().unwrap();
    synthetic(d.path());
    ok(
        d.path(),
        &[
            "train-classifier",
            "--out-dir",
            "clf",
            "--informal",
            "syn/train.informal",
            "--formal",
            "syn/train.formal",
        ],
    );
    let out = ok(
        d.path(),
        &[
            "evaluate",
            "--out-dir",
            "ev",
            "--hyp",
            "syn/test.informal",
            "--refs",
            "syn/test.formal.ref0",
            "syn/test.formal.ref1",
            "syn/test.formal.ref2",
            "syn/test.formal.ref3",
            "--classifier",
            "clf/classifier.txt",
        ],
    );
    let r: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    let (bleu, acc, hm) = (r["bleu"].as_f64().unwrap(), r["acc"].as_f64().unwrap(), r["hm"].as_f64().unwrap());
    assert!(acc < 50.0, "informal text judged formal: {acc}");
    assert!((hm - 2.0 * bleu * acc / (bleu + acc)).abs() < 1e-9);
}

#[test]
fn perturb_is_deterministic() {
    let d = TempDir::new().unwrap();
    synthetic(d.path());
    let args = |out: &'static str| {
        vec![
            "perturb",
            "--out-dir",
            out,
            "--input",
            "syn/unlabeled.informal",
            "--method",
            "mask",
            "--ratio",
            "0.1",
            "--seed",
            "7",
        ]
    };
    ok(d.path(), &args("p1"));
    ok(d.path(), &args("p2"));
    let a = fs::read(d.path().join("p1/perturbed.txt")).unwrap();
    let b = fs::read(d.path().join("p2/perturbed.txt")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, fs::read(d.path().join("syn/unlabeled.informal")).unwrap());
    ok(
        d.path(),
        &[
            "perturb",
            "--out-dir",
            "p3",
            "--input",
            "syn/unlabeled.informal",
            "--method",
            "spell",
            "--spelling",
            "syn/spelling.tsv",
        ],
    );
}

// Frozen from the first run of this configuration.
const REGRESSION_FINAL_BLEU: f64 = 57.447269626120764;

#[test]
fn train_table_on_synthetic_fixture() {
    let d = TempDir::new().unwrap();
    synthetic(d.path());
    let args = [
        "train",
        "--out-dir",
        "run",
        "--generator",
        "table",
        "--train-src",
        "syn/train.informal",
        "--train-tgt",
        "syn/train.formal",
        "--unlabeled",
        "syn/unlabeled.informal",
        "--valid-src",
        "syn/valid.informal",
        "--valid-ref",
        "syn/valid.formal",
        "--spelling",
        "syn/spelling.tsv",
        "--warmup-steps",
        "200",
        "--validate-every",
        "50",
        "--max-ssl-steps",
        "200",
        "--filters",
        "bleu",
    ];
    ok(d.path(), &args);
    let run_dir = d.path().join("run");
    assert_eq!(
        entries(&run_dir),
        ["checkpoints", "config.txt", "filter_audit.log", "manifest.json", "metrics.log", "summary.json"]
    );
    assert_eq!(entries(d.path()), ["run", "syn"]);
    let metrics = fs::read_to_string(run_dir.join("metrics.log")).unwrap();
    let last: serde_json::Value = serde_json::from_str(metrics.lines().last().unwrap()).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    assert_eq!(last["best_bleu"].as_f64().unwrap(), REGRESSION_FINAL_BLEU);

    let replay = ok(d.path(), &["filter-replay", "--out-dir", "replay", "--audit", "run/filter_audit.log"]);
    let r: serde_json::Value = serde_json::from_str(replay.trim()).unwrap();
    assert_eq!(r["kept_violations"], 0);
    assert_eq!(r["records"], 200 * 56);

    // Re-running with the manifest's values reproduces the run.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["warmup_steps"], "200");
    assert_eq!(manifest["config"]["filters"], "bleu");
    let mut again: Vec<&str> = args.to_vec();
    again[2] = "run2";
    ok(d.path(), &again);
    assert_eq!(fs::read(run_dir.join("metrics.log")).unwrap(), fs::read(d.path().join("run2/metrics.log")).unwrap());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let d = TempDir::new().unwrap();
    synthetic(d.path());
    fs::write(
        d.path().join("train.conf"),
        "# run settings\nwarmup_steps = 5\nmax_ssl_steps = 4\nvalidate_every = 2\nlambda = 0.25\nfilters = bleu\nphi = 0.6\n",
    )
    .unwrap();
    ok(
        d.path(),
        &[
            "train",
            "--out-dir",
            "run",
            "--generator",
            "mock",
            "--config",
            "train.conf",
            "--lambda",
            "0.5",
            "--set",
            "perturb=mask",
            "--train-src",
            "syn/train.informal",
            "--train-tgt",
            "syn/train.formal",
            "--unlabeled",
            "syn/unlabeled.informal",
            "--valid-src",
            "syn/valid.informal",
            "--valid-ref",
            "syn/valid.formal",
        ],
    );
    let cfg = fs::read_to_string(d.path().join("run/config.txt")).unwrap();
    for line in ["lambda = 0.5", "warmup_steps = 5", "phi = 0.6", "filters = bleu", "perturb = mask", "beam = 5"] {
        assert!(cfg.lines().any(|l| l == line), "missing `{line}` in\n{cfg}");
    }
}

#[test]
fn classifier_lm_and_collection_pipeline() {
    let d = TempDir::new().unwrap();
    synthetic(d.path());
    ok(
        d.path(),
        &["train-classifier", "--out-dir", "clf", "--informal", "syn/train.informal", "--formal", "syn/train.formal"],
    );
    ok(d.path(), &["train-lm", "--out-dir", "lm", "--corpus", "syn/train.informal"]);
    fs::write(
        d.path().join("raw.txt"),
        fs::read_to_string(d.path().join("syn/valid.informal")).unwrap()
            + &fs::read_to_string(d.path().join("syn/valid.formal")).unwrap(),
    )
    .unwrap();
    ok(
        d.path(),
        &[
            "collect-unlabeled",
            "--out-dir",
            "pool",
            "--raw",
            "raw.txt",
            "--classifier",
            "clf/classifier.txt",
            "--lm",
            "lm/lm.txt",
            "--n",
            "100",
        ],
    );
    let pool = fs::read_to_string(d.path().join("pool/unlabeled.txt")).unwrap();
    assert_eq!(pool.lines().count(), 100);
    let formal: std::collections::HashSet<String> = fs::read_to_string(d.path().join("syn/valid.formal"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    let leaked = pool.lines().filter(|l| formal.contains(*l)).count();
    assert!(leaked < 10, "{leaked} formal sentences collected");
}

#[test]
fn exit_codes_and_error_messages() {
    let d = TempDir::new().unwrap();
    let usage = run(d.path(), &["evaluate", "--bogus"]);
    assert_eq!(usage.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&usage.stderr).contains("--bogus"));
    assert_eq!(run(d.path(), &["no-such-command"]).status.code(), Some(2));

    let missing = run(d.path(), &["train-lm", "--out-dir", "lm", "--corpus", "absent.txt"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.txt"));

    assert_eq!(run(d.path(), &["--help"]).status.code(), Some(0));
    assert!(entries(d.path()).is_empty(), "failed commands wrote files");
}
