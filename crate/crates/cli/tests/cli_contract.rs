//! Exit-code and file contracts of the command-line surface, driven
//! through the compiled binary on small synthetic fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dlrrec"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().expect("spawn").status.code().expect("code")
}

struct Pipeline {
    dir: tempfile::TempDir,
}

impl Pipeline {
    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn sims(&self, side: &str) -> PathBuf {
        self.dir.path().join(format!("sims-{side}.json"))
    }
}

/// synth + both swing sides from the smoke configs.
fn smoke_pipeline() -> Pipeline {
    let p = Pipeline {
        dir: tempfile::tempdir().unwrap(),
    };
    let status = bin()
        .arg("synth")
        .arg("--config")
        .arg(repo_config("smoke-synth.json"))
        .arg("--out")
        .arg(p.data())
        .status()
        .unwrap();
    assert!(status.success());
    for side in ["user", "item"] {
        let status = bin()
            .args(["swing", "--side", side, "--alpha", "1.0", "--topk", "5"])
            .arg("--data")
            .arg(p.data())
            .arg("--out")
            .arg(p.sims(side))
            .status()
            .unwrap();
        assert!(status.success());
    }
    p
}

#[test]
fn synth_is_byte_identical_across_invocations() {
    let p1 = smoke_pipeline();
    let p2 = smoke_pipeline();
    for file in [
        "interactions.jsonl",
        "schema.json",
        "clusters.json",
        "user-summary.emb",
        "item-summary.emb",
        "item-image.emb",
    ] {
        let a = fs::read(p1.data().join(file)).unwrap();
        let b = fs::read(p2.data().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical synth runs");
    }
}

#[test]
fn synth_missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let c = code(
        bin()
            .args(["synth", "--config", "/nonexistent/cfg.json", "--out"])
            .arg(dir.path().join("out")),
    );
    assert_eq!(c, 2);
}

#[test]
fn swing_cli_matches_hand_computed_score() {
    // 2 users x 2 items full positive matrix: s(i1, i2) = 1/(1+2)
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let lines = [
        ("u1", "i1"),
        ("u1", "i2"),
        ("u2", "i1"),
        ("u2", "i2"),
    ]
    .map(|(u, i)| format!("{{\"user_id\":\"{u}\",\"item_id\":\"{i}\",\"rating\":5}}"));
    fs::write(data.join("interactions.jsonl"), lines.join("\n") + "\n").unwrap();
    let out = dir.path().join("sims.json");
    let status = bin()
        .args(["swing", "--side", "item", "--alpha", "1.0", "--topk", "5"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let sims: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let score = sims["neighbors"]["i1"][0][1].as_f64().unwrap();
    assert!((score - 1.0 / 3.0).abs() < 1e-9, "score {score}");
    assert_eq!(sims["neighbors"]["i1"][0][0], "i2");
}

#[test]
fn swing_empty_interactions_is_empty_map_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("interactions.jsonl"), "").unwrap();
    let out = dir.path().join("sims.json");
    let c = code(
        bin()
            .args(["swing", "--side", "user", "--topk", "5"])
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&out),
    );
    assert_eq!(c, 0);
    let sims: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(sims["neighbors"].as_object().unwrap().is_empty());
}

#[test]
fn swing_bad_flags_exit_2() {
    let p = smoke_pipeline();
    let out = p.dir.path().join("x.json");
    for args in [["--alpha", "0.0", "--topk", "5"], ["--alpha", "1.0", "--topk", "0"]] {
        let c = code(
            bin()
                .args(["swing", "--side", "item"])
                .args(args)
                .arg("--data")
                .arg(p.data())
                .arg("--out")
                .arg(&out),
        );
        assert_eq!(c, 2);
    }
    // malformed interactions: rating out of range
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(
        data.join("interactions.jsonl"),
        "{\"user_id\":\"u\",\"item_id\":\"i\",\"rating\":6}\n",
    )
    .unwrap();
    let c = code(
        bin()
            .args(["swing", "--side", "item", "--topk", "5"])
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&out),
    );
    assert_eq!(c, 2);
}

#[test]
fn train_writes_runs_and_aggregate() {
    let p = smoke_pipeline();
    let out = p.dir.path().join("runs");
    let status = bin()
        .arg("train")
        .arg("--config")
        .arg(repo_config("smoke-train.json"))
        .arg("--data")
        .arg(p.data())
        .arg("--user-sims")
        .arg(p.sims("user"))
        .arg("--item-sims")
        .arg(p.sims("item"))
        .arg("--out")
        .arg(&out)
        .args(["--repeats", "2"])
        .status()
        .unwrap();
    assert!(status.success());
    for f in [
        "config.json",
        "aggregate.json",
        "run_0/report.json",
        "run_0/best.ckpt",
        "run_1/report.json",
        "run_1/best.ckpt",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    // aggregate min-FP is <= each run's best FP
    let agg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("aggregate.json")).unwrap()).unwrap();
    let min_fp = agg["min_best_fp_rate"].as_f64().unwrap();
    for r in agg["runs"].as_array().unwrap() {
        assert!(min_fp <= r["best_test_fp_rate"].as_f64().unwrap() + 1e-15);
    }
}

#[test]
fn train_missing_sims_exits_2() {
    let p = smoke_pipeline();
    let c = code(
        bin()
            .arg("train")
            .arg("--config")
            .arg(repo_config("smoke-train.json"))
            .arg("--data")
            .arg(p.data())
            .args(["--user-sims", "/nonexistent/sims.json"])
            .arg("--item-sims")
            .arg(p.sims("item"))
            .arg("--out")
            .arg(p.dir.path().join("runs")),
    );
    assert_eq!(c, 2);
}

#[test]
fn train_unknown_mask_exits_2() {
    let p = smoke_pipeline();
    let c = code(
        bin()
            .arg("train")
            .arg("--config")
            .arg(repo_config("smoke-train.json"))
            .arg("--data")
            .arg(p.data())
            .arg("--user-sims")
            .arg(p.sims("user"))
            .arg("--item-sims")
            .arg(p.sims("item"))
            .arg("--out")
            .arg(p.dir.path().join("runs"))
            .args(["--mask", "bogus"]),
    );
    assert_eq!(c, 2);
}

#[test]
fn eval_reproduces_report_best_metrics_exactly() {
    let p = smoke_pipeline();
    let out = p.dir.path().join("runs");
    assert!(bin()
        .arg("train")
        .arg("--config")
        .arg(repo_config("smoke-train.json"))
        .arg("--data")
        .arg(p.data())
        .arg("--user-sims")
        .arg(p.sims("user"))
        .arg("--item-sims")
        .arg(p.sims("item"))
        .arg("--out")
        .arg(&out)
        .args(["--repeats", "1"])
        .status()
        .unwrap()
        .success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run_0/report.json")).unwrap()).unwrap();

    let output = bin()
        .arg("eval")
        .arg("--ckpt")
        .arg(out.join("run_0/best.ckpt"))
        .arg("--data")
        .arg(p.data())
        .args(["--split", "test"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let metrics: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&output.stdout)).unwrap();
    assert_eq!(metrics["fp_rate"], report["best_test_fp_rate"]);
    assert_eq!(metrics["accuracy"], report["best_test_accuracy"]);
    assert!(metrics["confusion"].is_object());

    // unknown mask is a usage error; a mismatched mask is rejected too
    let c = code(
        bin()
            .arg("eval")
            .arg("--ckpt")
            .arg(out.join("run_0/best.ckpt"))
            .arg("--data")
            .arg(p.data())
            .args(["--mask", "nonsense"]),
    );
    assert_eq!(c, 2);
    let c = code(
        bin()
            .arg("eval")
            .arg("--ckpt")
            .arg(out.join("run_0/best.ckpt"))
            .arg("--data")
            .arg(p.data())
            .args(["--mask", "image"]),
    );
    assert_eq!(c, 2);
}

#[test]
fn gradcheck_corruption_fixture_exits_1() {
    let out = bin()
        .args(["gradcheck", "--seeds", "1", "--corrupt", "sigmoid"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn log_env_var_controls_verbosity() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("synth")
        .arg("--config")
        .arg(repo_config("smoke-synth.json"))
        .arg("--out")
        .arg(dir.path().join("data"))
        .env("DLRREC_LOG", "error")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(
        out.stderr.is_empty(),
        "DLRREC_LOG=error should silence info lines: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn report_unreadable_run_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let c = code(
        bin()
            .args(["report", "--runs", "/nonexistent/run"])
            .arg("--out")
            .arg(dir.path().join("table")),
    );
    assert_eq!(c, 2);
}

#[test]
fn train_outputs_are_idempotent() {
    let p = smoke_pipeline();
    let out_a = p.dir.path().join("runs-a");
    let out_b = p.dir.path().join("runs-b");
    for out in [&out_a, &out_b] {
        assert!(bin()
            .arg("train")
            .arg("--config")
            .arg(repo_config("smoke-train.json"))
            .arg("--data")
            .arg(p.data())
            .arg("--user-sims")
            .arg(p.sims("user"))
            .arg("--item-sims")
            .arg(p.sims("item"))
            .arg("--out")
            .arg(out)
            .args(["--repeats", "1"])
            .status()
            .unwrap()
            .success());
    }
    for f in ["config.json", "aggregate.json", "run_0/report.json", "run_0/best.ckpt"] {
        assert_eq!(
            fs::read(out_a.join(f)).unwrap(),
            fs::read(out_b.join(f)).unwrap(),
            "{f} not byte-identical"
        );
    }
}
