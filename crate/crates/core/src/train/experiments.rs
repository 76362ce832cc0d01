use serde::Serialize;

use super::{train, Metrics, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::{count_params, FusionConfig};
use crate::objectives::TaskKind;
use crate::store::{synthesize, EmbeddingRecord, SyntheticSpec, SyntheticTask};

/// A single-factor change to a training config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationDelta {
    /// No cross-attention layers at all.
    NoCrossAttention,
    /// Layers keep their feed-forward blocks but neither stream attends to
    /// the other, so the modalities meet only in the fusion vector.
    ConcatOnly,
    /// Only the text stream attends to the image stream.
    SingleAttention,
    Layers(usize),
    NoProduct,
    NoDifference,
    DirectConcatOnly,
    NoContrastive,
    NoL2Reg,
}

impl AblationDelta {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match *self {
            Self::NoCrossAttention => c.flags.use_cross_attention = false,
            Self::ConcatOnly => c.flags.cross_modal_exchange = false,
            Self::SingleAttention => c.flags.bidirectional = false,
            Self::Layers(l) => c.fusion.layers = l,
            Self::NoProduct => {
                c.flags.fusion_use_product = false;
                c.flags.fusion_direct_concat_only = false;
            }
            Self::NoDifference => {
                c.flags.fusion_use_difference = false;
                c.flags.fusion_direct_concat_only = false;
            }
            Self::DirectConcatOnly => {
                c.flags.fusion_use_product = false;
                c.flags.fusion_use_difference = false;
                c.flags.fusion_direct_concat_only = true;
            }
            Self::NoContrastive => c.weights.lambda_con = 0.0,
            Self::NoL2Reg => c.weights.lambda_reg = 0.0,
        }
        c
    }

    pub fn describe(&self) -> String {
        match self {
            Self::NoCrossAttention => "flags.use_cross_attention = false (L = 0)".into(),
            Self::ConcatOnly => "flags.cross_modal_exchange = false".into(),
            Self::SingleAttention => "flags.bidirectional = false".into(),
            Self::Layers(l) => format!("fusion.layers = {l}"),
            Self::NoProduct => "flags.fusion_use_product = false".into(),
            Self::NoDifference => "flags.fusion_use_difference = false".into(),
            Self::DirectConcatOnly => "flags.fusion_direct_concat_only = true".into(),
            Self::NoContrastive => "weights.lambda_con = 0".into(),
            Self::NoL2Reg => "weights.lambda_reg = 0".into(),
        }
    }
}

/// Every runnable ablation axis, by its printed name.
pub fn ablation_axes() -> Vec<(&'static str, AblationDelta)> {
    vec![
        ("No cross-attention", AblationDelta::NoCrossAttention),
        ("Concat only", AblationDelta::ConcatOnly),
        ("Single attention", AblationDelta::SingleAttention),
        ("Bi-attention (L=2)", AblationDelta::Layers(2)),
        ("Bi-attention (L=6)", AblationDelta::Layers(6)),
        ("Bi-attention (L=8)", AblationDelta::Layers(8)),
        ("w/o element product", AblationDelta::NoProduct),
        ("w/o difference", AblationDelta::NoDifference),
        ("Direct concat only", AblationDelta::DirectConcatOnly),
        ("w/o contrastive", AblationDelta::NoContrastive),
        ("w/o L2 reg", AblationDelta::NoL2Reg),
    ]
}

const ENCODER_AXES: [&str; 5] = ["CLIP-B/32", "CLIP-B/16", "OpenCLIP-B/32", "OpenCLIP-L/14", "SigLIP-B/16"];

fn canonical(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn ablation_delta(name: &str) -> Result<AblationDelta> {
    let key = canonical(name);
    if let Some((_, d)) = ablation_axes().into_iter().find(|(n, _)| canonical(n) == key) {
        return Ok(d);
    }
    if ENCODER_AXES.iter().any(|e| canonical(e) == key) {
        return Err(Error::InvalidConfig(format!(
            "{name:?} swaps the frozen encoder; extract a cache with that encoder and train on it instead"
        )));
    }
    Err(Error::UnknownAxis(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

impl SeedSummary {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { per_seed: values, mean, std }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub name: String,
    pub change: String,
    pub config: TrainConfig,
    pub metrics: Vec<Metrics>,
    pub accuracy: SeedSummary,
    pub macro_f1: SeedSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub axis: String,
    pub seeds: Vec<u64>,
    pub base: VariantResult,
    pub ablated: VariantResult,
    /// `ablated.accuracy.mean - base.accuracy.mean`.
    pub delta_accuracy: f64,
}

fn run_variant(name: &str, change: String, cfg: &TrainConfig, data: &[EmbeddingRecord], seeds: &[u64]) -> Result<VariantResult> {
    let mut metrics = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let c = TrainConfig { seed, checkpoint_path: None, ..cfg.clone() };
        let out = train(&c, data)?;
        metrics.push(out.final_metrics.ok_or(Error::EmptyData)?);
    }
    Ok(VariantResult {
        name: name.to_string(),
        change,
        config: cfg.clone(),
        accuracy: SeedSummary::new(metrics.iter().map(|m| m.accuracy).collect()),
        macro_f1: SeedSummary::new(metrics.iter().map(|m| m.macro_f1).collect()),
        metrics,
    })
}

/// Trains the base config and the ablated one on the same data and seeds.
pub fn ablation_run(base: &TrainConfig, axis: &str, data: &[EmbeddingRecord], seeds: &[u64]) -> Result<AblationReport> {
    let delta = ablation_delta(axis)?;
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one seed".into()));
    }
    let ablated_cfg = delta.apply(base);
    ablated_cfg.validate()?;
    let base_r = run_variant("default", "none".into(), base, data, seeds)?;
    let abl_r = run_variant(axis, delta.describe(), &ablated_cfg, data, seeds)?;
    Ok(AblationReport {
        axis: axis.to_string(),
        seeds: seeds.to_vec(),
        delta_accuracy: abl_r.accuracy.mean - base_r.accuracy.mean,
        base: base_r,
        ablated: abl_r,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityResult {
    pub d_h: usize,
    pub layers: usize,
    pub heads: usize,
    pub params: u64,
    pub accuracy: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BottleneckReport {
    pub chance: f64,
    pub holdout_size: usize,
    pub results: Vec<CapacityResult>,
    /// Same pipeline with the label functional on the retained coordinates.
    pub control: CapacityResult,
}

/// Capacity sweep used when none is given: widths 8 to 64, zero to two layers.
pub fn default_capacity_sweep(d_v: usize, d_t: usize) -> Vec<FusionConfig> {
    [(8, 0, 2), (32, 2, 4), (64, 2, 8)]
        .into_iter()
        .map(|(d_h, layers, heads)| FusionConfig {
            d_h,
            layers,
            heads,
            ffn_dim: 4 * d_h,
            ..FusionConfig::tiny(d_v, d_t, 2)
        })
        .collect()
}

fn capacity_run(cfg: &TrainConfig, data: &[EmbeddingRecord]) -> Result<CapacityResult> {
    let trainer = super::Trainer::new(cfg.clone(), data)?;
    let train_records = trainer.train_records().to_vec();
    let out = trainer.finish()?;
    let accuracy = out.final_metrics.ok_or(Error::EmptyData)?.accuracy;
    let train_accuracy = super::evaluate(&out.params, &cfg.task, &train_records)?.accuracy;
    Ok(CapacityResult {
        d_h: cfg.fusion.d_h,
        layers: cfg.fusion.layers,
        heads: cfg.fusion.heads,
        params: count_params(&cfg.fusion, &cfg.flags).total,
        accuracy,
        train_accuracy,
    })
}

/// Trains each capacity in `sweep` on bottleneck data, plus a control run
/// whose label lives in the retained subspace.
pub fn bottleneck_experiment(spec: &SyntheticSpec, base: &TrainConfig, sweep: &[FusionConfig]) -> Result<BottleneckReport> {
    if spec.task != SyntheticTask::Bottleneck {
        return Err(Error::InvalidConfig("bottleneck_experiment needs a bottleneck spec".into()));
    }
    let classes = 2;
    let default_sweep;
    let sweep = if sweep.is_empty() {
        default_sweep = default_capacity_sweep(spec.d_v, spec.d_t);
        &default_sweep[..]
    } else {
        sweep
    };
    let with = |f: &FusionConfig| TrainConfig {
        task: TaskKind::Classification { classes },
        fusion: FusionConfig { d_v: spec.d_v, d_t: spec.d_t, out_dim: classes, ..f.clone() },
        checkpoint_path: None,
        ..base.clone()
    };
    let data = synthesize(spec)?;
    let mut results = Vec::with_capacity(sweep.len());
    for f in sweep {
        results.push(capacity_run(&with(f), &data)?);
    }
    let control_data = synthesize(&SyntheticSpec { control: true, ..spec.clone() })?;
    let control = capacity_run(&with(&sweep[0]), &control_data)?;
    let holdout_size = crate::store::holdout_split(&data, base.holdout_fraction).1.len();
    Ok(BottleneckReport {
        chance: 1.0 / classes as f64,
        holdout_size,
        results,
        control,
    })
}
