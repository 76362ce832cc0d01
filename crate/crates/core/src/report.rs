//! Text and JSON-lines rendering for benchmark and evaluation results.

use serde::Serialize;

use crate::bench::BenchReport;
use crate::train::{Metrics, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Aligned, human-readable table.
    Text,
    /// One JSON object per line.
    JsonLines,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "json-lines" | "jsonl" => Ok(Self::JsonLines),
            other => Err(format!("unknown format {other:?}, expected text or json-lines")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Report<'a> {
    Bench(&'a BenchReport),
    Metrics(&'a Metrics),
    History(&'a [StepRecord]),
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("report serializes");
    s.push('\n');
    s
}

fn table(rows: &[(String, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn bench_rows(r: &BenchReport) -> Vec<(String, String)> {
    vec![
        kv("batch_size", r.batch_size),
        kv("iterations", r.iterations),
        kv("warmup_iterations", r.warmup_iterations),
        kv("latency_p50_ms", format!("{:.4}", r.latency_ms.p50)),
        kv("latency_p90_ms", format!("{:.4}", r.latency_ms.p90)),
        kv("latency_p99_ms", format!("{:.4}", r.latency_ms.p99)),
        kv("throughput_pairs_per_s", format!("{:.1}", r.throughput)),
        kv("peak_memory_bytes", r.peak_memory_bytes),
        kv("config_hash", &r.config_hash),
    ]
}

fn metrics_rows(m: &Metrics) -> Vec<(String, String)> {
    let mut rows = vec![
        kv("n", m.n),
        kv("accuracy", format!("{:.4}", m.accuracy)),
        kv("macro_precision", format!("{:.4}", m.macro_precision)),
        kv("macro_recall", format!("{:.4}", m.macro_recall)),
        kv("macro_f1", format!("{:.4}", m.macro_f1)),
    ];
    if let Some(mae) = m.mae {
        rows.push(kv("mae", format!("{mae:.6}")));
    }
    if let Some(rmse) = m.rmse {
        rows.push(kv("rmse", format!("{rmse:.6}")));
    }
    for (i, row) in m.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        rows.push(kv(&format!("confusion[{i}]"), cells.join(" ")));
    }
    rows
}

fn history_table(h: &[StepRecord]) -> String {
    if h.is_empty() {
        return String::new();
    }
    let header = ["step", "lr", "task_loss", "con_loss", "reg_loss", "total_loss"];
    let cells: Vec<[String; 6]> = h
        .iter()
        .map(|r| {
            [
                r.step.to_string(),
                format!("{:.3e}", r.lr),
                format!("{:.6}", r.task_loss),
                format!("{:.6}", r.con_loss),
                format!("{:.6}", r.reg_loss),
                format!("{:.6}", r.total_loss),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..6)
        .map(|c| cells.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap())
        .collect();
    let line = |row: &[&str]| {
        let parts: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        parts.join("  ") + "\n"
    };
    let mut out = line(&header);
    for r in &cells {
        out += &line(&r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Serializes a report. Field order is fixed, so equal reports render to
/// identical bytes. An empty history renders as empty output.
pub fn emit_report(report: Report<'_>, format: ReportFormat) -> String {
    match (report, format) {
        (Report::Bench(r), ReportFormat::Text) => table(&bench_rows(r)),
        (Report::Bench(r), ReportFormat::JsonLines) => json_line(r),
        (Report::Metrics(m), ReportFormat::Text) => table(&metrics_rows(m)),
        (Report::Metrics(m), ReportFormat::JsonLines) => json_line(m),
        (Report::History(h), ReportFormat::Text) => history_table(h),
        (Report::History(h), ReportFormat::JsonLines) => h.iter().map(json_line).collect(),
    }
}
