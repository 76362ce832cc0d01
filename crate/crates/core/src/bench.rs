//! Forward-pass latency and throughput measurement.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::{count_params, forward, AblationFlags, FusionConfig, FusionParams, Mode};
use crate::tensor::{FlushDenormals, RngState, Tensor};
use crate::train::content_hash;

pub const MIN_ITERATIONS: usize = 30;
pub const MIN_WARMUP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub batch_size: usize,
    pub iterations: usize,
    pub warmup_iterations: usize,
    pub latency_ms: Percentiles,
    /// Pairs per second over the summed timed region.
    pub throughput: f64,
    /// Parameters plus the activations one forward pass keeps alive.
    pub peak_memory_bytes: u64,
    pub config_hash: String,
}

pub const PRESETS: [&str; 3] = ["default", "tiny", "sentinel"];

/// Architectures selectable by name for benchmarking.
pub fn preset(name: &str) -> Option<(FusionConfig, AblationFlags)> {
    match name {
        "default" => Some((FusionConfig::default(), AblationFlags::default())),
        "tiny" => Some((FusionConfig::tiny(32, 32, 2), AblationFlags::default())),
        "sentinel" => Some(sentinel()),
        _ => None,
    }
}

/// Smallest valid network on the default input widths: no layers, width 2.
pub fn sentinel() -> (FusionConfig, AblationFlags) {
    let cfg = FusionConfig { d_h: 2, layers: 0, heads: 1, ffn_dim: 2, head_hidden: 2, ..FusionConfig::default() };
    (cfg, AblationFlags { use_cross_attention: false, ..AblationFlags::default() })
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn config_hash(config: &FusionConfig, flags: &AblationFlags) -> String {
    let json = serde_json::to_vec(&(config, flags)).expect("config serializes");
    content_hash(&json)
}

/// Bytes held by the parameters and by every activation the forward pass
/// retains for a batch of `batch` pairs, in f32.
pub fn forward_memory_estimate(config: &FusionConfig, flags: &AblationFlags, batch: usize) -> u64 {
    let d_h = config.d_h as u64;
    let s = config.tokens() as u64;
    let layers = if flags.use_cross_attention { config.layers as u64 } else { 0 };
    let streams = if flags.bidirectional { 2 } else { 1 };
    let attention_scores = if s > 1 { config.heads as u64 * s * s } else { 0 };
    let per_layer = 2 * (7 * d_h + 2 * config.ffn_dim as u64) + streams * attention_scores;
    let fusion = if flags.fusion_direct_concat_only { 2 * d_h } else { 4 * d_h };
    let per_row = (config.d_v + config.d_t) as u64
        + 6 * d_h
        + layers * per_layer
        + fusion
        + 3 * config.head_hidden as u64
        + config.out_dim as u64;
    4 * (count_params(config, flags).total + batch as u64 * per_row)
}

fn unit_batch(rng: &mut RngState, rows: usize, d: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        let g = rng.normal(d);
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(g.iter().map(|x| (x / n) as f32));
    }
    Tensor::new(vec![rows, d], data)
}

/// Seconds taken by each timed eval-mode forward pass over fresh random
/// unit-norm batches. Batch generation and warmup runs are not timed.
pub fn time_forward(
    params: &FusionParams<f32>,
    batch_size: usize,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if iterations < MIN_ITERATIONS || warmup < MIN_WARMUP {
        return Err(Error::InvalidConfig(format!(
            "bench needs at least {MIN_ITERATIONS} iterations and {MIN_WARMUP} warmup runs"
        )));
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let cfg = &params.config;
    let mut rng = RngState::new(seed);
    let _ftz = FlushDenormals::new();
    let mut times = Vec::with_capacity(iterations);
    for i in 0..warmup + iterations {
        let v = unit_batch(&mut rng, batch_size, cfg.d_v)?;
        let t = unit_batch(&mut rng, batch_size, cfg.d_t)?;
        let start = Instant::now();
        let out = forward(&v, &t, params, Mode::Eval)?;
        let elapsed = start.elapsed().as_secs_f64();
        std::hint::black_box(out);
        if i >= warmup {
            times.push(elapsed);
        }
    }
    Ok(times)
}

/// Builds a report from per-iteration times in seconds.
pub fn summarize(params: &FusionParams<f32>, batch_size: usize, warmup: usize, times: &[f64]) -> BenchReport {
    let total: f64 = times.iter().sum();
    let mut ms: Vec<f64> = times.iter().map(|t| t * 1e3).collect();
    ms.sort_by(f64::total_cmp);
    let cfg = &params.config;
    BenchReport {
        batch_size,
        iterations: times.len(),
        warmup_iterations: warmup,
        latency_ms: Percentiles {
            p50: percentile(&ms, 50.0),
            p90: percentile(&ms, 90.0),
            p99: percentile(&ms, 99.0),
        },
        throughput: (batch_size * times.len()) as f64 / total.max(f64::MIN_POSITIVE),
        peak_memory_bytes: forward_memory_estimate(cfg, &params.flags, batch_size),
        config_hash: config_hash(cfg, &params.flags),
    }
}

pub fn bench_forward(
    params: &FusionParams<f32>,
    batch_size: usize,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchReport> {
    let times = time_forward(params, batch_size, iterations, warmup, seed)?;
    Ok(summarize(params, batch_size, warmup, &times))
}
