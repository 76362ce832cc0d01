//! Single affine classifier on frozen embeddings.

use serde::{Deserialize, Serialize};

use super::metrics::{class_targets, Metrics};
use crate::error::{Error, Result};
use crate::fusion::Linear;
use crate::objectives::cross_entropy;
use crate::optim::{clip_global_norm, lr_at_step, AdamWConfig, AdamWState, ScheduleConfig};
use crate::params::{ParamKind, TensorList};
use crate::store::{batch_indices, gather_batch, Batch, EmbeddingRecord};
use crate::tensor::{FlushDenormals, RngState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeInput {
    ImageOnly,
    TextOnly,
    Concat,
}

impl std::str::FromStr for ProbeInput {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "image" | "image_only" => Ok(Self::ImageOnly),
            "text" | "text_only" => Ok(Self::TextOnly),
            "concat" => Ok(Self::Concat),
            other => Err(format!("unknown probe input {other:?}, expected image, text or concat")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub input: ProbeInput,
    pub classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// `total_steps = 0` means "every step of every epoch".
    pub schedule: ScheduleConfig,
    pub optimizer: AdamWConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            input: ProbeInput::Concat,
            classes: 2,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            clip_norm: 1.0,
            schedule: ScheduleConfig {
                peak_lr: 1e-2,
                warmup_steps: 50,
                total_steps: 0,
                min_lr: 0.0,
            },
            optimizer: AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() },
        }
    }
}

fn features(b: &Batch, input: ProbeInput) -> Tensor<f32> {
    match input {
        ProbeInput::ImageOnly => b.v.clone(),
        ProbeInput::TextOnly => b.t.clone(),
        ProbeInput::Concat => Tensor::hcat(&[&b.v, &b.t]).expect("same row count"),
    }
}

fn predict(layer: &Linear<f32>, x: &Tensor<f32>) -> Result<Vec<usize>> {
    let logits = layer.forward(x)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect())
}

/// Trains on `train` and reports metrics on `test`.
pub fn linear_probe(cfg: &ProbeConfig, train: &[EmbeddingRecord], test: &[EmbeddingRecord]) -> Result<Metrics> {
    if cfg.classes < 2 {
        return Err(Error::InvalidConfig("a probe needs at least 2 classes".into()));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyData);
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("batch_size and epochs must be positive".into()));
    }
    let _ftz = FlushDenormals::new();
    let train_targets = class_targets(train, cfg.classes)?;
    let test_targets = class_targets(test, cfg.classes)?;
    let all: Vec<usize> = (0..train.len()).collect();
    let width = features(&gather_batch(train, &all[..1]), cfg.input).cols();

    let root = RngState::new(cfg.seed);
    let mut init = root.derive(1);
    let bound = (6.0 / (width + cfg.classes) as f64).sqrt();
    let w: Vec<f32> = init.uniform(cfg.classes * width).iter().map(|u| ((2.0 * u - 1.0) * bound) as f32).collect();
    let mut params = TensorList::new(vec![
        (ParamKind::Weight, Tensor::new(vec![cfg.classes, width], w)?),
        (ParamKind::Bias, Tensor::zeros(&[cfg.classes])),
    ]);
    let mut opt = AdamWState::new(&params, cfg.optimizer);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size.min(train.len()));
    let mut schedule = cfg.schedule;
    if schedule.total_steps == 0 {
        schedule.total_steps = (cfg.epochs * steps_per_epoch) as u64;
    }
    schedule.validate()?;

    let linear = |p: &TensorList<f32>| Linear {
        weight: p.items[0].1.clone(),
        bias: p.items[1].1.clone(),
    };
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = root.derive(2).derive(epoch as u64);
        for idx in batch_indices(train.len(), cfg.batch_size.min(train.len()), &mut rng, false)? {
            let b = gather_batch(train, &idx);
            let x = features(&b, cfg.input);
            let layer = linear(&params);
            let logits = layer.forward(&x)?;
            let targets: Vec<usize> = idx.iter().map(|&i| train_targets[i]).collect();
            let (loss, g) = cross_entropy(&logits, &targets)?;
            step += 1;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let mut grad = Linear {
                weight: Tensor::zeros(layer.weight.shape()),
                bias: Tensor::zeros(layer.bias.shape()),
            };
            layer.backward(&x, &g, &mut grad)?;
            let mut grads = TensorList::new(vec![(ParamKind::Weight, grad.weight), (ParamKind::Bias, grad.bias)]);
            clip_global_norm(&mut grads, cfg.clip_norm)?;
            opt.apply(&mut params, &grads, lr_at_step(step, &schedule)?)?;
        }
    }

    let layer = linear(&params);
    let idx: Vec<usize> = (0..test.len()).collect();
    let mut predicted = Vec::with_capacity(test.len());
    for chunk in idx.chunks(1024) {
        predicted.extend(predict(&layer, &features(&gather_batch(test, chunk), cfg.input))?);
    }
    Metrics::from_predictions(&predicted, &test_targets, cfg.classes)
}
