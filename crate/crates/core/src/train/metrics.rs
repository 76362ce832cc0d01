use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{forward, FusionParams, Mode};
use crate::objectives::TaskKind;
use crate::store::{gather_batch, EmbeddingRecord, Label};

const EVAL_CHUNK: usize = 512;

/// Held-out quality. For classification the macro scores are unweighted
/// means over classes. Ranking reports the fraction of correctly ordered
/// (matched, shifted) pairs in every score field. Regression fills `mae` and
/// `rmse` and leaves the classification fields at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
}

impl Metrics {
    pub fn from_predictions(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::LengthMismatch(predicted.len(), truth.len()));
        }
        if truth.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= classes || t >= classes {
                return Err(Error::TargetOutOfRange { index: p.max(t), classes });
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let k = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for c in 0..k {
            let tp = confusion[c][c] as f64;
            let predicted: u64 = (0..k).map(|t| confusion[t][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            p_sum += p;
            r_sum += r;
            f_sum += f;
        }
        let kf = k.max(1) as f64;
        Self {
            n: total as usize,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            macro_precision: p_sum / kf,
            macro_recall: r_sum / kf,
            macro_f1: f_sum / kf,
            confusion,
            mae: None,
            rmse: None,
        }
    }

    fn uniform_score(n: usize, score: f64) -> Self {
        Self {
            n,
            accuracy: score,
            macro_precision: score,
            macro_recall: score,
            macro_f1: score,
            confusion: Vec::new(),
            mae: None,
            rmse: None,
        }
    }
}

/// Pair score used wherever a single number per pair is needed: the output
/// itself for one-wide heads, else last logit minus first.
pub fn pair_score(row: &[f32]) -> f64 {
    match row.len() {
        1 => row[0] as f64,
        k => row[k - 1] as f64 - row[0] as f64,
    }
}

fn eval_outputs(params: &FusionParams<f32>, records: &[EmbeddingRecord], shift: usize) -> Result<Vec<Vec<f32>>> {
    let n = records.len();
    let mut out = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let b = gather_batch(records, chunk);
        let t = if shift == 0 {
            b.t
        } else {
            let shifted: Vec<usize> = chunk.iter().map(|i| (i + shift) % n).collect();
            gather_batch(records, &shifted).t
        };
        let (o, _) = forward(&b.v, &t, params, Mode::Eval)?;
        out.extend((0..o.rows()).map(|r| o.row(r).to_vec()));
    }
    Ok(out)
}

pub(crate) fn class_targets(records: &[EmbeddingRecord], classes: usize) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| match r.label {
            Label::Class(c) if (c as usize) < classes => Ok(c as usize),
            Label::Class(c) => Err(Error::TargetOutOfRange { index: c as usize, classes }),
            other => Err(Error::Heterogeneous(format!(
                "record {} has label {other:?}, classification needs class labels",
                r.id
            ))),
        })
        .collect()
}

pub(crate) fn scalar_targets(records: &[EmbeddingRecord]) -> Result<Vec<f32>> {
    records
        .iter()
        .map(|r| match r.label {
            Label::Scalar(s) => Ok(s),
            other => Err(Error::Heterogeneous(format!(
                "record {} has label {other:?}, regression needs scalar labels",
                r.id
            ))),
        })
        .collect()
}

/// Eval-mode metrics of `params` on `records`.
pub fn evaluate(params: &FusionParams<f32>, task: &TaskKind, records: &[EmbeddingRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::EmptyData);
    }
    let _ftz = crate::tensor::FlushDenormals::new();
    match *task {
        TaskKind::Classification { classes } => {
            let truth = class_targets(records, classes)?;
            let out = eval_outputs(params, records, 0)?;
            let predicted: Vec<usize> = out
                .iter()
                .map(|row| {
                    let mut best = 0;
                    for (j, x) in row.iter().enumerate() {
                        if *x > row[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect();
            Metrics::from_predictions(&predicted, &truth, classes)
        }
        TaskKind::PairwiseRanking => {
            if records.len() < 2 {
                return Err(Error::DegenerateBatch(records.len()));
            }
            let pos = eval_outputs(params, records, 0)?;
            let neg = eval_outputs(params, records, 1)?;
            let wins = pos.iter().zip(&neg).filter(|(p, n)| pair_score(p) > pair_score(n)).count();
            Ok(Metrics::uniform_score(records.len(), wins as f64 / records.len() as f64))
        }
        TaskKind::Regression => {
            let truth = scalar_targets(records)?;
            let out = eval_outputs(params, records, 0)?;
            let n = records.len() as f64;
            let (mut abs, mut sq) = (0.0, 0.0);
            for (row, t) in out.iter().zip(&truth) {
                let e = row[0] as f64 - *t as f64;
                abs += e.abs();
                sq += e * e;
            }
            let mut m = Metrics::uniform_score(records.len(), 0.0);
            m.mae = Some(abs / n);
            m.rmse = Some((sq / n).sqrt());
            Ok(m)
        }
    }
}

/// One optimizer step's losses. `task_loss`, `con_loss` and `reg_loss` are
/// unweighted; `total_loss` applies the loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub task_loss: f64,
    pub con_loss: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
}

pub const HISTORY_CSV_HEADER: &str = "step,lr,task_loss,con_loss,reg_loss,total_loss";

/// CSV with shortest round-trip float formatting.
pub fn history_csv(history: &[StepRecord]) -> String {
    let mut s = String::from(HISTORY_CSV_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?}\n",
            r.step, r.lr, r.task_loss, r.con_loss, r.reg_loss, r.total_loss
        ));
    }
    s
}
