use std::path::Path;
use std::process::{Command, Output};

fn frevl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frevl")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_RUN: &str = "epochs = 1\nbatch_size = 8\n[schedule]\nwarmup_steps = 5\n";

#[test]
fn synth_then_info_reports_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let o = frevl(dir.path(), &["synth", "--task", "matching", "--n", "4000", "--seed", "7", "--out", "c.frvl"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = frevl(dir.path(), &["info", "--cache", "c.frvl"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("records: 4000"), "{out}");
    assert!(out.contains("d_v: 32  d_t: 32"), "{out}");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = frevl(dir.path(), &["train", "--out-dir", "run"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--data"));

    let o = frevl(dir.path(), &["transmogrify"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"));

    let o = frevl(dir.path(), &["bench", "--preset", "huge"]);
    assert_eq!(code(&o), 1);

    let o = frevl(dir.path(), &["bench", "--preset", "tiny", "--iterations", "3"]);
    assert_eq!(code(&o), 1);

    let o = frevl(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = frevl(dir.path(), &["info", "--cache", "missing.frvl"]);
    assert_eq!(code(&o), 2);
    std::fs::write(dir.path().join("junk.frvl"), b"not a cache at all, clearly").unwrap();
    let o = frevl(dir.path(), &["info", "--cache", "junk.frvl"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("corrupt cache"));
}

#[test]
fn numeric_faults_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    frevl(dir.path(), &["synth", "--task", "matching", "--n", "200", "--out", "c.frvl"]);
    let cfg = "epochs = 50\nbatch_size = 8\nholdout_fraction = 0.0\n[schedule]\npeak_lr = 1e36\nwarmup_steps = 1\n[optimizer]\nweight_decay = 0.0\n";
    std::fs::write(dir.path().join("bad.toml"), cfg).unwrap();
    let o = frevl(dir.path(), &["train", "--data", "c.frvl", "--config", "bad.toml", "--out-dir", "run"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite loss at step"));
}

#[test]
fn train_eval_info_round_trip_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    frevl(p, &["synth", "--task", "matching", "--n", "400", "--seed", "3", "--out", "c.frvl"]);
    std::fs::write(p.join("cfg.toml"), SMALL_RUN).unwrap();
    let args = ["train", "--data", "c.frvl", "--config", "cfg.toml", "--out-dir", "run", "--seed", "5"];
    let read = |name: &str| std::fs::read(p.join("run").join(name)).unwrap();

    let o = frevl(p, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = (read("model.ckpt"), read("history.csv"), read("manifest.json"), stdout(&o));
    let o = frevl(p, &args);
    assert_eq!(code(&o), 0);
    let second = (read("model.ckpt"), read("history.csv"), read("manifest.json"), stdout(&o));
    assert!(first == second, "outputs differ between identical runs");

    let csv = String::from_utf8(first.1).unwrap();
    assert!(csv.starts_with("step,lr,task_loss,con_loss,reg_loss,total_loss\n"));
    let manifest: serde_json::Value = serde_json::from_slice(&first.2).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["data_hash"].as_str().unwrap().len(), 64);

    let o = frevl(p, &["eval", "--checkpoint", "run/model.ckpt", "--data", "c.frvl", "--format", "json-lines"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(m["n"], 400);

    let o = frevl(p, &["info", "--checkpoint", "run/model.ckpt"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("params: projection"));
}

#[test]
fn resume_continues_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    frevl(p, &["synth", "--task", "matching", "--n", "300", "--out", "c.frvl"]);
    std::fs::write(p.join("cfg.toml"), SMALL_RUN).unwrap();
    let o = frevl(p, &["train", "--data", "c.frvl", "--config", "cfg.toml", "--out-dir", "a"]);
    assert_eq!(code(&o), 0);
    let o = frevl(p, &["train", "--data", "c.frvl", "--config", "cfg.toml", "--out-dir", "b", "--resume", "a/model.ckpt"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(p.join("a/model.ckpt")).unwrap(), std::fs::read(p.join("b/model.ckpt")).unwrap());

    let o = frevl(p, &["train", "--data", "c.frvl", "--out-dir", "c", "--resume", "a/model.ckpt"]);
    assert_eq!(code(&o), 1, "a different config must be refused");
}

#[test]
fn import_probe_and_ablate_list() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut tsv = String::new();
    for i in 0..600u32 {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        tsv += &format!("{i}\t{}\t{s},0.1,0.2\t0.3,{s},0.5\n", i % 2);
    }
    std::fs::write(p.join("e.tsv"), tsv).unwrap();
    let o = frevl(p, &["import", "--tsv", "e.tsv", "--out", "e.frvl", "--dtype", "f16"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = frevl(p, &["probe", "--data", "e.frvl", "--input", "image"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("accuracy"));

    let o = frevl(p, &["ablate", "--list"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 11);
    let o = frevl(p, &["ablate", "--data", "e.frvl", "--axis", "w/o nothing"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bench_json_lines_has_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = frevl(dir.path(), &["bench", "--preset", "tiny", "--iterations", "30", "--warmup", "5", "--format", "json-lines"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    for key in ["batch_size", "iterations", "warmup_iterations", "latency_ms", "throughput", "peak_memory_bytes", "config_hash"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}
