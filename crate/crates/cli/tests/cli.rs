//! End-to-end tests of the binary: pipeline plumbing, exit-code taxonomy,
//! manifests, determinism and config-file precedence. Everything runs at
//! miniature sizes; the full-scale protocol lives in the core crate's
//! acceptance suite.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prefdiff"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn prefdiff")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Workspace {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> String {
        self.root.join(rel).display().to_string()
    }

    /// Tiny but complete pipeline: data → reference → pairs.
    fn prepare_reference(&self) -> (String, String) {
        ok(&[
            "gen-data",
            "--n-per-class",
            "80",
            "--seed",
            "3",
            "--out",
            &self.path("data"),
        ]);
        ok(&[
            "pretrain",
            "--data",
            &self.path("data/train.csv"),
            "--steps",
            "60",
            "--batch-size",
            "32",
            "--hidden-width",
            "16",
            "--hidden-layers",
            "1",
            "--seed",
            "3",
            "--out",
            &self.path("ref"),
        ]);
        let ckpt = self.path("ref/ref.ckpt.json");
        ok(&[
            "gen-pairs",
            "--pair-source",
            "reference",
            "--ref",
            &ckpt,
            "--n-pairs-per-class",
            "2",
            "--seed",
            "3",
            "--out",
            &self.path("pairs"),
        ]);
        (ckpt, self.path("pairs/pairs.csv"))
    }
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let ws = Workspace::new();
    let (ckpt, pairs) = ws.prepare_reference();
    ok(&[
        "finetune",
        "--method",
        "ddspo",
        "--ref",
        &ckpt,
        "--pairs",
        &pairs,
        "--beta",
        "400",
        "--steps",
        "20",
        "--seed",
        "3",
        "--out",
        &ws.path("tuned"),
    ]);
    ok(&[
        "sample",
        "--ckpt",
        &ws.path("tuned/model.ckpt.json"),
        "--per-class",
        "20",
        "--seed",
        "3",
        "--out",
        &ws.path("samples"),
    ]);
    ok(&[
        "eval",
        "--samples",
        &ws.path("samples/samples.csv"),
        "--out",
        &ws.path("eval"),
    ]);
    for artifact in [
        "data/clean.csv",
        "data/train.csv",
        "data/manifest.json",
        "ref/ref.ckpt.json",
        "ref/trace.csv",
        "pairs/pairs.csv",
        "tuned/model.ckpt.json",
        "tuned/trace.csv",
        "samples/samples.csv",
        "eval/metrics.json",
        "eval/scatter.svg",
        "eval/manifest.json",
    ] {
        assert!(
            Path::new(&ws.path(artifact)).exists(),
            "missing artifact {artifact}"
        );
    }
    // metrics JSON mirrors the report
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("eval/metrics.json")).unwrap())
            .unwrap();
    assert!(metrics["condition_consistency"].as_f64().unwrap() >= 0.0);
    assert_eq!(metrics["per_class"].as_array().unwrap().len(), 6);

    // trace CSV schema
    let trace = std::fs::read_to_string(ws.path("tuned/trace.csv")).unwrap();
    assert!(trace.starts_with("step,loss\n"));
    assert_eq!(trace.lines().count(), 1 + 20);
}

#[test]
fn manifests_record_resolved_configuration() {
    let ws = Workspace::new();
    ok(&[
        "gen-data",
        "--n-per-class",
        "10",
        "--seed",
        "9",
        "--out",
        &ws.path("d"),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("d/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["n_per_class"], 10);
    assert_eq!(manifest["config"]["classes"], 6);
    let out_dir = manifest["output_dir"].as_str().unwrap();
    assert!(Path::new(out_dir).is_absolute());
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let ws = Workspace::new();
    ok(&["gen-data", "--n-per-class", "25", "--seed", "5", "--out", &ws.path("a")]);
    ok(&["gen-data", "--n-per-class", "25", "--seed", "5", "--out", &ws.path("b")]);
    ok(&["gen-data", "--n-per-class", "25", "--seed", "6", "--out", &ws.path("c")]);
    let read = |p: &str| std::fs::read(ws.path(p)).unwrap();
    assert_eq!(read("a/train.csv"), read("b/train.csv"));
    assert_eq!(read("a/clean.csv"), read("b/clean.csv"));
    assert_ne!(read("a/train.csv"), read("c/train.csv"));
}

#[test]
fn sample_is_deterministic_per_seed() {
    let ws = Workspace::new();
    let (ckpt, _) = ws.prepare_reference();
    ok(&["sample", "--ckpt", &ckpt, "--per-class", "10", "--seed", "4", "--out", &ws.path("s1")]);
    ok(&["sample", "--ckpt", &ckpt, "--per-class", "10", "--seed", "4", "--out", &ws.path("s2")]);
    assert_eq!(
        std::fs::read(ws.path("s1/samples.csv")).unwrap(),
        std::fs::read(ws.path("s2/samples.csv")).unwrap()
    );
}

#[test]
fn exit_codes_follow_the_taxonomy() {
    let ws = Workspace::new();

    // 2: flag validation
    assert_eq!(code(&run(&["gen-data", "--classes", "1", "--out", &ws.path("x")])), 2);
    let (ckpt, pairs) = ws.prepare_reference();
    assert_eq!(
        code(&run(&[
            "finetune", "--method", "bogus", "--ref", &ckpt, "--pairs", &pairs,
            "--out", &ws.path("x"),
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "pretrain", "--data", &ws.path("data/train.csv"), "--lr", "0",
            "--out", &ws.path("x"),
        ])),
        2
    );
    // clap's own usage errors also exit 2
    assert_eq!(code(&run(&["finetune", "--no-such-flag"])), 2);

    // 3: missing input file
    assert_eq!(
        code(&run(&[
            "finetune", "--method", "ddspo", "--ref", &ws.path("nope.json"),
            "--pairs", &pairs, "--out", &ws.path("x"),
        ])),
        3
    );
    // 3: corrupt checkpoint
    std::fs::write(ws.path("broken.json"), b"{ not json").unwrap();
    assert_eq!(
        code(&run(&[
            "sample", "--ckpt", &ws.path("broken.json"), "--out", &ws.path("x"),
        ])),
        3
    );
    // 3: method/pair-mode mismatch (paired pairs into the unpaired method)
    assert_eq!(
        code(&run(&[
            "finetune", "--method", "ddspo-efficient", "--ref", &ckpt,
            "--pairs", &pairs, "--steps", "2", "--out", &ws.path("x"),
        ])),
        3
    );

    // 4: numeric failure — an absurd rate overflows the activations into
    // NaN within a couple of steps
    assert_eq!(
        code(&run(&[
            "pretrain", "--data", &ws.path("data/train.csv"), "--steps", "30",
            "--batch-size", "8", "--hidden-width", "8", "--hidden-layers", "1",
            "--lr", "1e200", "--out", &ws.path("x"),
        ])),
        4
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let ws = Workspace::new();
    std::fs::create_dir_all(ws.path("cfg")).unwrap();
    std::fs::write(
        ws.path("cfg/run.json"),
        r#"{"n_per_class": 7, "seed": 42, "classes": 4}"#,
    )
    .unwrap();
    // file supplies classes=4 and n_per_class=7; the flag overrides seed
    ok(&[
        "gen-data",
        "--config",
        &ws.path("cfg/run.json"),
        "--seed",
        "1",
        "--out",
        &ws.path("g"),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("g/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["classes"], 4);
    assert_eq!(manifest["config"]["n_per_class"], 7);
    assert_eq!(manifest["seed"], 1);
    let clean = std::fs::read_to_string(ws.path("g/clean.csv")).unwrap();
    assert_eq!(clean.lines().count(), 1 + 4 * 7);

    // unknown config keys are rejected as flag errors
    std::fs::write(ws.path("cfg/bad.json"), r#"{"frobnicate": 1}"#).unwrap();
    assert_eq!(
        code(&run(&[
            "gen-data", "--config", &ws.path("cfg/bad.json"), "--out", &ws.path("x"),
        ])),
        2
    );
}

#[test]
fn selfcheck_passes_and_corruption_hook_fails() {
    let started = std::time::Instant::now();
    let out = ok(&["selfcheck"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("[PASS]").count(), 5);
    assert!(started.elapsed().as_secs() < 60, "selfcheck exceeded 60 s");

    let corrupted = run(&["selfcheck", "--corrupt-gradient"]);
    assert_eq!(code(&corrupted), 1);
    assert!(String::from_utf8_lossy(&corrupted.stdout).contains("[FAIL] gradient_check"));
}

#[test]
fn sweep_writes_grid_and_exits_by_status() {
    let ws = Workspace::new();
    let tiny = [
        "--n-per-class", "40",
        "--pretrain-steps", "30",
        "--finetune-steps", "4",
        "--samples-per-condition", "5",
        "--hidden-width", "8",
        "--hidden-layers", "1",
    ];
    let mut args = vec![
        "sweep", "--methods", "ddpo,ddspo", "--N", "12", "--beta", "200,400",
        "--seeds", "0", "--out",
    ];
    let out_dir = ws.path("sweep");
    args.push(&out_dir);
    args.extend_from_slice(&tiny);
    ok(&args);
    let grid = std::fs::read_to_string(ws.path("sweep/grid.csv")).unwrap();
    assert!(grid.starts_with("method,N,beta,seed,consistency,centroid_shift,status"));
    assert_eq!(grid.lines().count(), 1 + 4); // 2 methods × 1 N × 2 betas × 1 seed
    for name in [
        "sweep_ddpo_N12_b200_s0.svg",
        "sweep_ddspo_N12_b400_s0.svg",
        "sweep_ddspo_N12_b400_s0.metrics.json",
    ] {
        assert!(Path::new(&ws.path(&format!("sweep/{name}"))).exists());
    }

    // unknown method -> exit 2
    assert_eq!(
        code(&run(&["sweep", "--methods", "nope", "--out", &ws.path("x")])),
        2
    );
    // N not divisible by classes -> exit 2
    assert_eq!(
        code(&run(&["sweep", "--N", "13", "--out", &ws.path("x")])),
        2
    );
    // flagged cells -> exit 5 (zero samples per condition fails evaluation
    // inside each cell without aborting the grid)
    let mut flagged_args = vec![
        "sweep", "--methods", "ddspo", "--N", "12", "--beta", "400",
        "--seeds", "0", "--samples-per-condition", "0", "--out",
    ];
    let flagged_dir = ws.path("sweep_flagged");
    flagged_args.push(&flagged_dir);
    flagged_args.extend_from_slice(&[
        "--n-per-class", "40", "--pretrain-steps", "10", "--finetune-steps", "2",
        "--hidden-width", "8", "--hidden-layers", "1",
    ]);
    let flagged = run(&flagged_args);
    assert_eq!(code(&flagged), 5);
    let grid = std::fs::read_to_string(ws.path("sweep_flagged/grid.csv")).unwrap();
    assert!(grid.contains("failed:"));
}
