//! Synthetic tasks with known information content.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{unit_f32, EmbeddingRecord, Label};
use crate::error::{Error, Result};
use crate::tensor::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    Matching,
    Bottleneck,
}

impl std::str::FromStr for SyntheticTask {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "matching" => Ok(Self::Matching),
            "bottleneck" => Ok(Self::Bottleneck),
            other => Err(format!("unknown task {other:?}, expected matching or bottleneck")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    pub n_samples: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub seed: u64,
    /// Width `k` of the latent block the "encoder" discards.
    pub bottleneck_hidden_dim: usize,
    /// Matching: scale of the perturbation added to `v` for matched pairs.
    pub noise: f64,
    /// Bottleneck: place the label functional on the retained coordinates.
    pub control: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            task: SyntheticTask::Matching,
            n_samples: 4000,
            d_v: 32,
            d_t: 32,
            seed: 0,
            bottleneck_hidden_dim: 16,
            noise: 0.8,
            control: false,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 100 {
            return Err(Error::InvalidConfig(format!("n_samples must be >= 100, got {}", self.n_samples)));
        }
        if self.d_v < 2 || self.d_t < 2 {
            return Err(Error::InvalidConfig("embedding dims must be >= 2".into()));
        }
        if self.task == SyntheticTask::Bottleneck && self.bottleneck_hidden_dim == 0 {
            return Err(Error::InvalidConfig("bottleneck_hidden_dim must be >= 1".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::InvalidConfig("noise must be >= 0".into()));
        }
        Ok(())
    }
}

// Independent random streams per role, so changing one draw pattern does
// not shift another.
const STREAM_LABELS: u64 = 1;
const STREAM_VECTORS: u64 = 2;
const STREAM_MAP: u64 = 3;

fn balanced_labels(n: usize, rng: &mut RngState) -> Vec<u32> {
    let mut labels: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
    rng.with_rng(|r| labels.shuffle(r));
    labels
}

/// Half the pairs are matched: `t = normalize(A v + noise · g / √d_t)` with
/// `A` the identity when `d_v = d_t` and a fixed random map otherwise. The
/// rest pair `v` with an independent `t`. Label 1 marks a match.
pub fn synth_matching_task(spec: &SyntheticSpec) -> Result<Vec<EmbeddingRecord>> {
    spec.validate()?;
    let root = RngState::new(spec.seed);
    let labels = balanced_labels(spec.n_samples, &mut root.derive(STREAM_LABELS));
    let mut rng = root.derive(STREAM_VECTORS);
    let map = (spec.d_v != spec.d_t).then(|| {
        let mut m = root.derive(STREAM_MAP);
        let scale = 1.0 / (spec.d_v as f64).sqrt();
        m.normal(spec.d_t * spec.d_v).into_iter().map(|x| x * scale).collect::<Vec<f64>>()
    });
    let mut out = Vec::with_capacity(spec.n_samples);
    for (i, &label) in labels.iter().enumerate() {
        let id = i as u64;
        let v = unit_f32(&rng.normal(spec.d_v), id)?;
        let t_raw: Vec<f64> = if label == 1 {
            let base: Vec<f64> = match &map {
                None => v.iter().map(|x| *x as f64).collect(),
                Some(m) => (0..spec.d_t)
                    .map(|r| (0..spec.d_v).map(|c| m[r * spec.d_v + c] * v[c] as f64).sum())
                    .collect(),
            };
            let g = rng.normal(spec.d_t);
            let s = spec.noise / (spec.d_t as f64).sqrt();
            base.iter().zip(g).map(|(b, e)| b + s * e).collect()
        } else {
            rng.normal(spec.d_t)
        };
        out.push(EmbeddingRecord {
            id,
            image: v,
            text: unit_f32(&t_raw, id)?,
            label: Label::Class(label),
        });
    }
    Ok(out)
}

/// Latent `u ∈ R^(d_v + k)`; the stored image vector keeps only the first
/// `d_v` coordinates and the label is the sign of a fixed functional of the
/// last `k`. `t` is independent noise. With `control` the functional reads
/// the first `d_v` coordinates instead.
pub fn synth_bottleneck_task(spec: &SyntheticSpec) -> Result<Vec<EmbeddingRecord>> {
    spec.validate()?;
    let (d_v, k) = (spec.d_v, spec.bottleneck_hidden_dim);
    let root = RngState::new(spec.seed);
    let w_len = if spec.control { d_v } else { k };
    let w = root.derive(STREAM_MAP).normal(w_len);
    let mut rng = root.derive(STREAM_VECTORS);
    let mut out = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let id = i as u64;
        let u = rng.normal(d_v + k);
        let read = if spec.control { &u[..d_v] } else { &u[d_v..] };
        let score: f64 = read.iter().zip(&w).map(|(a, b)| a * b).sum();
        out.push(EmbeddingRecord {
            id,
            image: unit_f32(&u[..d_v], id)?,
            text: unit_f32(&rng.normal(spec.d_t), id)?,
            label: Label::Class(u32::from(score > 0.0)),
        });
    }
    Ok(out)
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<Vec<EmbeddingRecord>> {
    match spec.task {
        SyntheticTask::Matching => synth_matching_task(spec),
        SyntheticTask::Bottleneck => synth_bottleneck_task(spec),
    }
}
