use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{AblationFlags, FusionConfig};
use crate::objectives::{LossWeights, TaskKind};
use crate::optim::{AdamWConfig, ScheduleConfig};

pub const HOLDOUT_FRACTION: f64 = 0.1;

/// Everything that determines a training run. Serialized as TOML; see
/// `docs/config.md` for the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Evaluate and checkpoint every this many steps; 0 disables.
    pub eval_every: u64,
    pub checkpoint_path: Option<PathBuf>,
    pub clip_norm: f64,
    pub holdout_fraction: f64,
    pub drop_last: bool,
    pub task: TaskKind,
    pub fusion: FusionConfig,
    pub flags: AblationFlags,
    pub weights: LossWeights,
    /// `total_steps = 0` means "every step of every epoch".
    pub schedule: ScheduleConfig,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 5,
            seed: 0,
            eval_every: 0,
            checkpoint_path: None,
            clip_norm: 1.0,
            holdout_fraction: HOLDOUT_FRACTION,
            drop_last: false,
            task: TaskKind::Classification { classes: 2 },
            fusion: FusionConfig::tiny(32, 32, 2),
            flags: AblationFlags::default(),
            weights: LossWeights::default(),
            schedule: ScheduleConfig {
                peak_lr: 2e-3,
                warmup_steps: 100,
                total_steps: 0,
                min_lr: 0.0,
            },
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Full-size model with COCO-scale settings:
    /// peak lr 1e-4, 1000 warmup steps, 30 epochs, batch 512.
    pub fn reference_coco() -> Self {
        Self {
            batch_size: 512,
            epochs: 30,
            task: TaskKind::PairwiseRanking,
            fusion: FusionConfig::default(),
            schedule: ScheduleConfig {
                peak_lr: 1e-4,
                warmup_steps: 1000,
                total_steps: 0,
                min_lr: 0.0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.weights.validate()?;
        self.optimizer.validate()?;
        self.fusion.validate(&self.flags)?;
        if self.fusion.out_dim != self.task.out_dim() {
            return Err(Error::InvalidConfig(format!(
                "fusion.out_dim = {} but the task needs {}",
                self.fusion.out_dim,
                self.task.out_dim()
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be positive".into()));
        }
        if self.weights.lambda_con > 0.0 && self.batch_size < 2 {
            return Err(Error::InvalidConfig("the contrastive term needs batch_size >= 2".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("clip_norm must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidConfig("holdout_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, train_records: usize) -> usize {
        if self.drop_last {
            train_records / self.batch_size
        } else {
            train_records.div_ceil(self.batch_size)
        }
    }

    /// The schedule with `total_steps` filled in when left at 0.
    pub fn resolved_schedule(&self, train_records: usize) -> Result<ScheduleConfig> {
        let mut s = self.schedule;
        let needed = (self.epochs * self.steps_per_epoch(train_records)) as u64;
        if s.total_steps == 0 {
            s.total_steps = needed;
        }
        if s.total_steps < needed {
            return Err(Error::InvalidConfig(format!(
                "schedule.total_steps = {} is shorter than the {needed} steps of the run",
                s.total_steps
            )));
        }
        s.validate()?;
        Ok(s)
    }

    /// Hash of every field except the checkpoint path; guards resumption.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.checkpoint_path = None;
        super::manifest::content_hash(&serde_json::to_vec(&c).expect("config serializes"))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}
