//! End-to-end runs of the `nbed` binary: synth -> train -> infer -> eval,
//! plus the config/exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nbed"));
    c.env_remove("NBED_SEED");
    c
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY_SETS: &[&str] = &[
    "--set",
    "model.location_channels=2,4",
    "--set",
    "model.semantic_stage_blocks=1,1,1",
    "--set",
    "model.semantic_stage_channels=12,24,48",
    "--set",
    "model.decoder_base_channels=4",
    "--set",
    "model.attention_head_dim=12",
];

#[test]
fn help_and_version_exit_zero() {
    let o = bin().arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("train"));
    let o = bin().arg("--version").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = bin().arg("transmogrify").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_set_value_exits_two() {
    let o = bin()
        .args(["flops", "--set", "model.location_channels=5,7"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("location_channels"));
}

#[test]
fn missing_checkpoint_exits_two() {
    let o = bin()
        .args(["infer", "--ckpt", "/no/such/file.nbed", "--out", "/tmp", "x.png"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flops_reports_the_default_budget() {
    let o = bin().arg("flops").output().unwrap();
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    let out = stdout(&o);
    let params: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("parameters="))
        .unwrap()
        .parse()
        .unwrap();
    let flops: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("flops="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((30e6..50e6).contains(&params), "parameters {params}");
    assert!((40e9..100e9).contains(&flops), "flops {flops}");
    assert!(out.contains("padded=496x336"));
}

#[test]
fn config_dump_round_trips_and_env_seed_wins() {
    let o = bin()
        .args(["config", "--set", "train.batch_size=2", "--set", "train.seed=7"])
        .env("NBED_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("train.batch_size = 2"));
    assert!(text.contains("train.seed = 42"));
    assert!(text.contains("model.seed = 42"));

    // the dump feeds back in unchanged
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("dump.cfg");
    std::fs::write(&cfg, &text).unwrap();
    let o2 = bin()
        .args(["config", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(o2.status.code(), Some(0));
    assert_eq!(stdout(&o2), text);
}

#[test]
fn synth_train_infer_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let preds = dir.path().join("preds");
    let report = dir.path().join("report");

    let o = bin()
        .args(["synth", "--count", "2", "--size", "32", "--shapes", "2", "--seed", "9", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "synth: {}", stderr(&o));
    let list = data.join("synth.lst");
    assert!(list.is_file());
    assert!(data.join("img_000.png").is_file());
    assert!(data.join("gt_001.png").is_file());

    let o = bin()
        .args(["train"])
        .args(TINY_SETS)
        .args(["--set", "train.max_iterations=2", "--set", "train.batch_size=1"])
        .args(["--set", "train.log_every=1"])
        .arg("--data")
        .arg(&list)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "train: {}", stderr(&o));
    let ckpt = run.join("checkpoint.nbed");
    assert!(ckpt.is_file());
    let log = std::fs::read_to_string(run.join("log.csv")).unwrap();
    assert!(log.starts_with("iteration,loss\n"));
    assert_eq!(log.lines().count(), 3); // header + 2 iterations
    assert!(run.join("config.cfg").is_file());

    let o = bin()
        .args(["infer", "--ckpt"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&preds)
        .args([data.join("img_000.png"), data.join("img_001.png")])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "infer: {}", stderr(&o));
    assert!(preds.join("img_000.png").is_file());
    assert!(preds.join("img_001.png").is_file());

    let o = bin()
        .args(["eval", "--data"])
        .arg(&list)
        .arg("--pred")
        .arg(&preds)
        .arg("--out")
        .arg(&report)
        .args(["--tol", "0.05"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "eval: {}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("ODS="), "got: {line}");
    assert!(line.contains("OIS="));
    let csv = std::fs::read_to_string(report.join("pr.csv")).unwrap();
    assert!(csv.starts_with("threshold,precision,recall,f\n"));
    assert!(report.join("pr.svg").is_file());
}

#[test]
fn resume_continues_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run1 = dir.path().join("run1");
    let run2 = dir.path().join("run2");

    let o = bin()
        .args(["synth", "--count", "1", "--size", "32", "--shapes", "2", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));

    let train = |out: &Path, iters: &str, resume: Option<&Path>| {
        let mut c = bin();
        c.args(["train"])
            .args(TINY_SETS)
            .args(["--set", &format!("train.max_iterations={iters}")])
            .args(["--set", "train.batch_size=1"])
            .arg("--data")
            .arg(data.join("synth.lst"))
            .arg("--out")
            .arg(out);
        if let Some(r) = resume {
            c.arg("--resume").arg(r);
        }
        c.output().unwrap()
    };
    let o = train(&run1, "1", None);
    assert_eq!(o.status.code(), Some(0), "first leg: {}", stderr(&o));
    let o = train(&run2, "2", Some(&run1.join("checkpoint.nbed")));
    assert_eq!(o.status.code(), Some(0), "second leg: {}", stderr(&o));
    assert!(stdout(&o).contains("trained 2 iterations"));
}
