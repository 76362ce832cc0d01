//! Embedding records: ingestion, the binary cache, text import, batching,
//! and synthetic task generators.

mod batch;
mod cache;
mod import;
mod synth;

use serde::{Deserialize, Serialize};

pub use batch::{batch_indices, gather_batch, holdout_split, make_batches, Batch};
pub use cache::{
    decode_cache, encode_cache, read_cache, record_size, write_cache, CacheHeader, CacheSummary, DType,
    CACHE_MAGIC, CACHE_VERSION, HEADER_BYTES,
};
pub use import::{import_tsv, parse_tsv};
pub use synth::{synth_bottleneck_task, synth_matching_task, synthesize, SyntheticSpec, SyntheticTask};

use crate::error::{Error, Result};

/// Unit-norm tolerance for vectors held in 32-bit floats.
pub const UNIT_NORM_F32: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    None,
    Class(u32),
    Scalar(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    None,
    Class,
    Scalar,
}

impl Label {
    pub fn kind(&self) -> LabelKind {
        match self {
            Label::None => LabelKind::None,
            Label::Class(_) => LabelKind::Class,
            Label::Scalar(_) => LabelKind::Scalar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: u64,
    pub image: Vec<f32>,
    pub text: Vec<f32>,
    pub label: Label,
}

impl EmbeddingRecord {
    pub fn is_unit_norm(&self, tol: f64) -> bool {
        [&self.image, &self.text].iter().all(|v| (norm(v) - 1.0).abs() <= tol)
    }
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

/// Normalizes in 64-bit and stores the result as f32.
pub(crate) fn unit_f32(raw: &[f64], id: u64) -> Result<Vec<f32>> {
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::ZeroNorm { id: Some(id) });
    }
    Ok(raw.iter().map(|x| (x / n) as f32).collect())
}

pub fn normalize_and_ingest(raw_image: &[f64], raw_text: &[f64], id: u64, label: Label) -> Result<EmbeddingRecord> {
    Ok(EmbeddingRecord {
        id,
        image: unit_f32(raw_image, id)?,
        text: unit_f32(raw_text, id)?,
        label,
    })
}

/// Checks that records share dimensions and label kind, and that ids are
/// unique. Returns `(d_v, d_t, label_kind)`; an empty set reports zeros.
pub fn check_homogeneous(records: &[EmbeddingRecord]) -> Result<(usize, usize, LabelKind)> {
    let Some(first) = records.first() else {
        return Ok((0, 0, LabelKind::None));
    };
    let (d_v, d_t, kind) = (first.image.len(), first.text.len(), first.label.kind());
    let mut seen = std::collections::HashSet::with_capacity(records.len());
    for r in records {
        if r.image.len() != d_v || r.text.len() != d_t {
            return Err(Error::Heterogeneous(format!(
                "record {} has dims ({}, {}), expected ({d_v}, {d_t})",
                r.id,
                r.image.len(),
                r.text.len()
            )));
        }
        if r.label.kind() != kind {
            return Err(Error::Heterogeneous(format!(
                "record {} has label kind {:?}, expected {kind:?}",
                r.id,
                r.label.kind()
            )));
        }
        if !seen.insert(r.id) {
            return Err(Error::DuplicateId(r.id));
        }
    }
    Ok((d_v, d_t, kind))
}
