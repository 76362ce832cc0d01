use frevl::bench::{bench_forward, config_hash, preset, sentinel, BenchReport, Percentiles};
use frevl::fusion::{init_params, FusionParams};
use frevl::report::{emit_report, Report, ReportFormat};
use frevl::tensor::RngState;
use frevl::train::{Metrics, StepRecord};
use frevl::Error;

fn params(name: &str) -> FusionParams<f32> {
    let (cfg, flags) = preset(name).unwrap();
    init_params(&cfg, &flags, &mut RngState::new(0)).unwrap()
}

#[test]
fn report_invariants() {
    let p = params("tiny");
    let r = bench_forward(&p, 32, 40, 5, 1).unwrap();
    let l = r.latency_ms;
    assert!(l.p50 <= l.p90 && l.p90 <= l.p99);
    assert_eq!((r.batch_size, r.iterations, r.warmup_iterations), (32, 40, 5));
    // Throughput is defined over the summed iteration times, which the
    // percentiles bracket.
    let lo = 32.0 * 1e3 / l.p99;
    assert!(r.throughput >= lo * 0.99, "throughput {} below {}", r.throughput, lo);
    assert_eq!(r.config_hash, config_hash(&p.config, &p.flags));
    assert!(r.peak_memory_bytes > 4 * 69_826);
}

#[test]
fn bench_rejects_short_runs() {
    let p = params("tiny");
    assert!(matches!(bench_forward(&p, 32, 29, 5, 0), Err(Error::InvalidConfig(_))));
    assert!(matches!(bench_forward(&p, 32, 30, 4, 0), Err(Error::InvalidConfig(_))));
    assert!(matches!(bench_forward(&p, 0, 30, 5, 0), Err(Error::InvalidConfig(_))));
}

#[test]
fn larger_batches_do_not_lose_throughput() {
    let p = params("tiny");
    let t32 = bench_forward(&p, 32, 60, 10, 0).unwrap().throughput;
    let t64 = bench_forward(&p, 64, 60, 10, 0).unwrap().throughput;
    assert!(t64 >= 0.8 * t32, "throughput(64) {t64} < 0.8 * throughput(32) {t32}");
}

#[test]
fn repeated_runs_agree() {
    let p = params("tiny");
    let a = bench_forward(&p, 32, 60, 10, 0).unwrap().latency_ms.p50;
    let b = bench_forward(&p, 32, 60, 10, 0).unwrap().latency_ms.p50;
    assert!((a - b).abs() <= 0.25 * a.max(b), "p50 {a} vs {b}");
}

#[test]
fn timing_tracks_work() {
    let (cfg, flags) = sentinel();
    cfg.validate(&flags).unwrap();
    let s = init_params::<f32>(&cfg, &flags, &mut RngState::new(0)).unwrap();
    let small = bench_forward(&s, 32, 30, 5, 0).unwrap().latency_ms.p50;
    let full = bench_forward(&params("default"), 32, 30, 5, 0).unwrap().latency_ms.p50;
    assert!(small < 0.1 * full, "sentinel p50 {small} ms vs default {full} ms");
}

fn sample_report() -> BenchReport {
    BenchReport {
        batch_size: 32,
        iterations: 100,
        warmup_iterations: 10,
        latency_ms: Percentiles { p50: 1.5, p90: 2.0, p99: 3.25 },
        throughput: 20000.0,
        peak_memory_bytes: 4096,
        config_hash: "ab".repeat(32),
    }
}

#[test]
fn emit_is_stable_and_complete() {
    let r = sample_report();
    for f in [ReportFormat::Text, ReportFormat::JsonLines] {
        assert_eq!(emit_report(Report::Bench(&r), f), emit_report(Report::Bench(&r.clone()), f));
    }
    let line = emit_report(Report::Bench(&r), ReportFormat::JsonLines);
    assert_eq!(line.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v.as_object().unwrap().len(), 7);
    assert_eq!(v["latency_ms"]["p99"], 3.25);
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    let order = ["batch_size", "iterations", "warmup_iterations", "latency_ms", "throughput", "peak_memory_bytes", "config_hash"];
    let pos = |k: &str| line.find(&format!("\"{k}\"")).unwrap();
    assert!(order.windows(2).all(|w| pos(w[0]) < pos(w[1])), "{keys:?}");

    let text = emit_report(Report::Bench(&r), ReportFormat::Text);
    assert!(text.contains("latency_p50_ms          1.5000\n"), "{text}");
}

#[test]
fn empty_history_is_empty_output() {
    assert_eq!(emit_report(Report::History(&[]), ReportFormat::JsonLines), "");
    assert_eq!(emit_report(Report::History(&[]), ReportFormat::Text), "");
    let h = [
        StepRecord { step: 1, lr: 1e-4, task_loss: 0.7, con_loss: 2.0, reg_loss: 100.0, total_loss: 1.9 },
        StepRecord { step: 2, lr: 2e-4, task_loss: 0.6, con_loss: 1.9, reg_loss: 99.0, total_loss: 1.78 },
    ];
    let jl = emit_report(Report::History(&h), ReportFormat::JsonLines);
    assert_eq!(jl.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(jl.lines().next().unwrap()).unwrap();
    assert_eq!(first["step"], 1);
    assert_eq!(emit_report(Report::History(&h), ReportFormat::Text).lines().count(), 3);
}

#[test]
fn metrics_render_in_both_formats() {
    let m = Metrics::from_confusion(vec![vec![3, 1], vec![0, 4]]);
    let text = emit_report(Report::Metrics(&m), ReportFormat::Text);
    assert!(text.contains("accuracy         0.8750"), "{text}");
    assert!(text.contains("confusion[0]     3 1"), "{text}");
    let v: serde_json::Value = serde_json::from_str(&emit_report(Report::Metrics(&m), ReportFormat::JsonLines)).unwrap();
    assert_eq!(v["n"], 8);
}
