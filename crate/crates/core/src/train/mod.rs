//! Training driver, evaluation, the linear-probe baseline and the ablation
//! and bottleneck experiments.

mod config;
mod experiments;
mod manifest;
mod metrics;
mod probe;

use serde::{Deserialize, Serialize};

pub use config::{TrainConfig, HOLDOUT_FRACTION};
pub use experiments::{
    ablation_axes, ablation_delta, ablation_run, bottleneck_experiment, AblationDelta, AblationReport,
    default_capacity_sweep, BottleneckReport, CapacityResult, SeedSummary, VariantResult,
};
pub use manifest::{content_hash, RunManifest};
pub use metrics::{evaluate, history_csv, pair_score, Metrics, StepRecord, HISTORY_CSV_HEADER};
pub use probe::{linear_probe, ProbeConfig, ProbeInput};

use crate::error::{Error, Result};
use crate::fusion::checkpoint::Checkpoint;
use crate::fusion::{backward, forward, init_params, FusionParams, Mode};
use crate::objectives::{
    add_reg_grad, contrastive_loss, cross_entropy, ranking_loss, smooth_l1, total_loss, TaskKind,
};
use crate::optim::{clip_global_norm, lr_at_step, AdamWState, ScheduleConfig};
use crate::params::ParamSet;
use crate::store::{batch_indices, gather_batch, holdout_split, EmbeddingRecord};
use crate::tensor::{FlushDenormals, RngState, Tensor};
use metrics::{class_targets, scalar_targets};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

/// Driver position, stored in checkpoints so a run can resume bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config_fingerprint: String,
    pub epoch: usize,
    pub batch_in_epoch: usize,
    pub global_step: u64,
    pub dropout_rng: RngState,
    pub history: Vec<StepRecord>,
    pub evals: Vec<(u64, Metrics)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FusionParams<f32>,
    pub history: Vec<StepRecord>,
    /// Periodic held-out evaluations as `(step, metrics)`.
    pub evals: Vec<(u64, Metrics)>,
    /// Held-out metrics after the last step; `None` without a held-out set.
    pub final_metrics: Option<Metrics>,
    pub train_size: usize,
    pub holdout_size: usize,
}

pub struct Trainer {
    cfg: TrainConfig,
    schedule: ScheduleConfig,
    train: Vec<EmbeddingRecord>,
    holdout: Vec<EmbeddingRecord>,
    params: FusionParams<f32>,
    optimizer: AdamWState<f32>,
    state: TrainState,
    epoch_order: Option<(usize, Vec<Vec<usize>>)>,
}

fn check_labels(task: &TaskKind, records: &[EmbeddingRecord]) -> Result<()> {
    match *task {
        TaskKind::Classification { classes } => class_targets(records, classes).map(|_| ()),
        TaskKind::Regression => scalar_targets(records).map(|_| ()),
        TaskKind::PairwiseRanking => Ok(()),
    }
}

impl Trainer {
    /// Splits `data` by id hash, checks labels against the task and
    /// initializes parameters from the seed.
    pub fn new(cfg: TrainConfig, data: &[EmbeddingRecord]) -> Result<Self> {
        let (train, holdout) = Self::prepare(&cfg, data)?;
        let schedule = cfg.resolved_schedule(train.len())?;
        let root = RngState::new(cfg.seed);
        let params = init_params::<f32>(&cfg.fusion, &cfg.flags, &mut root.derive(STREAM_INIT))?;
        let optimizer = AdamWState::new(&params, cfg.optimizer);
        let state = TrainState {
            config_fingerprint: cfg.fingerprint(),
            epoch: 0,
            batch_in_epoch: 0,
            global_step: 0,
            dropout_rng: root.derive(STREAM_DROPOUT),
            history: Vec::new(),
            evals: Vec::new(),
        };
        Ok(Self {
            cfg,
            schedule,
            train,
            holdout,
            params,
            optimizer,
            state,
            epoch_order: None,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(cfg: TrainConfig, data: &[EmbeddingRecord], ckpt: Checkpoint) -> Result<Self> {
        let (train, holdout) = Self::prepare(&cfg, data)?;
        let schedule = cfg.resolved_schedule(train.len())?;
        let bad = |why: &str| Error::InvalidConfig(format!("cannot resume: {why}"));
        let raw = ckpt.train_state.ok_or_else(|| bad("checkpoint has no driver state"))?;
        let state: TrainState =
            serde_json::from_slice(&raw).map_err(|e| bad(&format!("unreadable driver state: {e}")))?;
        if state.config_fingerprint != cfg.fingerprint() {
            return Err(bad("checkpoint was written for a different training config"));
        }
        if ckpt.params.config != cfg.fusion || ckpt.params.flags != cfg.flags {
            return Err(bad("checkpoint architecture differs from the config"));
        }
        let optimizer = ckpt.optimizer.ok_or_else(|| bad("checkpoint has no optimizer state"))?;
        Ok(Self {
            cfg,
            schedule,
            train,
            holdout,
            params: ckpt.params,
            optimizer,
            state,
            epoch_order: None,
        })
    }

    fn prepare(cfg: &TrainConfig, data: &[EmbeddingRecord]) -> Result<(Vec<EmbeddingRecord>, Vec<EmbeddingRecord>)> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyData);
        }
        crate::store::check_homogeneous(data)?;
        let (d_v, d_t) = (data[0].image.len(), data[0].text.len());
        if d_v != cfg.fusion.d_v || d_t != cfg.fusion.d_t {
            return Err(Error::InvalidConfig(format!(
                "data dims ({d_v}, {d_t}) do not match fusion config ({}, {})",
                cfg.fusion.d_v, cfg.fusion.d_t
            )));
        }
        check_labels(&cfg.task, data)?;
        let (train, holdout) = holdout_split(data, cfg.holdout_fraction);
        if train.len() < cfg.batch_size {
            return Err(Error::BatchTooLarge { batch: cfg.batch_size, records: train.len() });
        }
        Ok((train, holdout))
    }

    pub fn params(&self) -> &FusionParams<f32> {
        &self.params
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn schedule(&self) -> &ScheduleConfig {
        &self.schedule
    }

    pub fn holdout(&self) -> &[EmbeddingRecord] {
        &self.holdout
    }

    pub fn train_records(&self) -> &[EmbeddingRecord] {
        &self.train
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
            train_state: Some(serde_json::to_vec(&self.state).expect("driver state serializes")),
        }
    }

    fn current_batch(&mut self) -> Result<Vec<usize>> {
        let epoch = self.state.epoch;
        if self.epoch_order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = RngState::new(self.cfg.seed).derive(STREAM_SHUFFLE).derive(epoch as u64);
            let order = batch_indices(self.train.len(), self.cfg.batch_size, &mut rng, self.cfg.drop_last)?;
            self.epoch_order = Some((epoch, order));
        }
        let (_, order) = self.epoch_order.as_ref().unwrap();
        Ok(order[self.state.batch_in_epoch].clone())
    }

    /// One optimizer step. Returns `None` once every epoch has run.
    pub fn step(&mut self) -> Result<Option<StepRecord>> {
        if self.is_finished() {
            return Ok(None);
        }
        let _ftz = FlushDenormals::new();
        let idx = self.current_batch()?;
        let batch = gather_batch(&self.train, &idx);
        let b = idx.len();
        let w = self.cfg.weights;
        let use_con = w.lambda_con > 0.0 && b >= 2;
        let ranking = self.cfg.task == TaskKind::PairwiseRanking;
        let next = |i: usize| (i + 1) % b;

        // Row layout: with the contrastive term every (i, j) pair runs at row
        // i·B + j and the diagonal doubles as the task batch; ranking without
        // it appends the shifted negatives after the matched rows.
        let (v_in, t_in, diag, neg): (Tensor<f32>, Tensor<f32>, Vec<usize>, Vec<usize>) = if use_con {
            let vi: Vec<usize> = (0..b * b).map(|r| r / b).collect();
            let ti: Vec<usize> = (0..b * b).map(|r| r % b).collect();
            (
                batch.v.gather_rows(&vi),
                batch.t.gather_rows(&ti),
                (0..b).map(|i| i * b + i).collect(),
                (0..b).map(|i| i * b + next(i)).collect(),
            )
        } else if ranking {
            let vi: Vec<usize> = (0..2 * b).map(|r| r % b).collect();
            let ti: Vec<usize> = (0..2 * b).map(|r| if r < b { r } else { next(r - b) }).collect();
            (batch.v.gather_rows(&vi), batch.t.gather_rows(&ti), (0..b).collect(), (b..2 * b).collect())
        } else {
            (batch.v.clone(), batch.t.clone(), (0..b).collect(), Vec::new())
        };

        // Overflow inside the network means the loss would be non-finite too.
        let (out, trace) = forward(&v_in, &t_in, &self.params, Mode::Train(&mut self.state.dropout_rng)).map_err(|e| match e {
            Error::NumericFault { .. } => Error::NonFiniteLoss { step: self.state.global_step + 1 },
            e => e,
        })?;
        let k = out.cols();
        let mut upstream = Tensor::<f32>::zeros(out.shape());
        let add = |up: &mut Tensor<f32>, row: usize, col: usize, g: f64| {
            let x = &mut up.row_mut(row)[col];
            *x = (*x as f64 + g) as f32;
        };
        let diag_out = out.gather_rows(&diag);

        let task_loss = match self.cfg.task {
            TaskKind::Classification { classes } => {
                let targets: Vec<usize> = batch
                    .labels
                    .iter()
                    .map(|l| match l {
                        crate::store::Label::Class(c) => *c as usize,
                        _ => unreachable!("labels checked at construction"),
                    })
                    .collect();
                debug_assert!(targets.iter().all(|&c| c < classes));
                let (l, g) = cross_entropy(&diag_out, &targets)?;
                for (i, &row) in diag.iter().enumerate() {
                    for c in 0..k {
                        add(&mut upstream, row, c, w.lambda_task * g.row(i)[c] as f64);
                    }
                }
                l
            }
            TaskKind::Regression => {
                let targets: Vec<f32> = batch.labels.iter().map(|l| match l {
                    crate::store::Label::Scalar(s) => *s,
                    _ => unreachable!("labels checked at construction"),
                }).collect();
                let pred = Tensor::vector((0..b).map(|i| diag_out.row(i)[0]).collect());
                let (l, g) = smooth_l1(&pred, &Tensor::vector(targets), 1.0)?;
                for (i, &row) in diag.iter().enumerate() {
                    add(&mut upstream, row, 0, w.lambda_task * g.data()[i] as f64);
                }
                l
            }
            TaskKind::PairwiseRanking if b >= 2 => {
                let pos = Tensor::vector(diag.iter().map(|&r| out.row(r)[0]).collect());
                let negs = Tensor::vector(neg.iter().map(|&r| out.row(r)[0]).collect());
                let r = ranking_loss(&pos, &negs)?;
                for i in 0..b {
                    add(&mut upstream, diag[i], 0, w.lambda_task * r.grad_pos.data()[i] as f64);
                    add(&mut upstream, neg[i], 0, w.lambda_task * r.grad_neg.data()[i] as f64);
                }
                r.loss
            }
            TaskKind::PairwiseRanking => 0.0,
        };

        let con_loss = if use_con {
            let scores: Vec<f64> = (0..b * b).map(|r| pair_score(out.row(r))).collect();
            let s = Tensor::<f64>::new(vec![b, b], scores)?;
            let (l, g) = contrastive_loss(&s, w.tau)?;
            for r in 0..b * b {
                let gs = w.lambda_con * g.data()[r];
                if k == 1 {
                    add(&mut upstream, r, 0, gs);
                } else {
                    add(&mut upstream, r, k - 1, gs);
                    add(&mut upstream, r, 0, -gs);
                }
            }
            l
        } else {
            0.0
        };

        let step = self.state.global_step + 1;
        let losses = total_loss(task_loss, con_loss, &self.params, &w);
        if !losses.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let mut grads = backward(&trace, &upstream, &self.params)?.params;
        add_reg_grad(&self.params, &mut grads, w.lambda_reg);
        clip_global_norm(&mut grads, self.cfg.clip_norm)?;
        let lr = lr_at_step(step, &self.schedule)?;
        self.optimizer.apply(&mut self.params, &grads, lr)?;
        if !self.params.is_finite() {
            return Err(Error::NumericFault { stage: "optimizer update", layer: None });
        }

        self.state.global_step = step;
        self.state.batch_in_epoch += 1;
        let batches = self.epoch_order.as_ref().map(|(_, o)| o.len()).unwrap_or(0);
        if self.state.batch_in_epoch >= batches {
            self.state.epoch += 1;
            self.state.batch_in_epoch = 0;
        }
        let record = StepRecord {
            step,
            lr,
            task_loss,
            con_loss,
            reg_loss: losses.reg,
            total_loss: losses.total,
        };
        self.state.history.push(record);

        if self.cfg.eval_every > 0 && step % self.cfg.eval_every == 0 {
            if !self.holdout.is_empty() {
                let m = evaluate(&self.params, &self.cfg.task, &self.holdout)?;
                self.state.evals.push((step, m));
            }
            if let Some(path) = &self.cfg.checkpoint_path {
                crate::fusion::checkpoint::save(path, &self.checkpoint())?;
            }
        }
        Ok(Some(record))
    }

    /// Runs up to `n` steps; returns how many ran.
    pub fn run_steps(&mut self, n: u64) -> Result<u64> {
        let mut done = 0;
        while done < n && self.step()?.is_some() {
            done += 1;
        }
        Ok(done)
    }

    pub fn finish(mut self) -> Result<TrainOutcome> {
        while self.step()?.is_some() {}
        let final_metrics = if self.holdout.is_empty() {
            None
        } else {
            Some(evaluate(&self.params, &self.cfg.task, &self.holdout)?)
        };
        if let Some(path) = &self.cfg.checkpoint_path {
            crate::fusion::checkpoint::save(path, &self.checkpoint())?;
        }
        Ok(TrainOutcome {
            params: self.params,
            history: self.state.history,
            evals: self.state.evals,
            final_metrics,
            train_size: self.train.len(),
            holdout_size: self.holdout.len(),
        })
    }
}

/// Full training run: split, initialize, run every epoch, evaluate.
pub fn train(cfg: &TrainConfig, data: &[EmbeddingRecord]) -> Result<TrainOutcome> {
    Trainer::new(cfg.clone(), data)?.finish()
}
