use rand::seq::SliceRandom;

use super::{EmbeddingRecord, Label};
use crate::binio::fnv1a64;
use crate::error::{Error, Result};
use crate::tensor::{RngState, Tensor};

/// Row `i` of `v` and `t` come from the same record.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<u64>,
    pub v: Tensor<f32>,
    pub t: Tensor<f32>,
    pub labels: Vec<Label>,
}

/// Shuffled index lists covering `0..n`.
pub fn batch_indices(n: usize, batch_size: usize, rng: &mut RngState, drop_last: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    if batch_size > n {
        return Err(Error::BatchTooLarge { batch: batch_size, records: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.with_rng(|r| order.shuffle(r));
    Ok(order
        .chunks(batch_size)
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(|c| c.to_vec())
        .collect())
}

pub fn gather_batch(records: &[EmbeddingRecord], indices: &[usize]) -> Batch {
    let d_v = records[indices[0]].image.len();
    let d_t = records[indices[0]].text.len();
    let mut v = Vec::with_capacity(indices.len() * d_v);
    let mut t = Vec::with_capacity(indices.len() * d_t);
    let mut ids = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let r = &records[i];
        v.extend_from_slice(&r.image);
        t.extend_from_slice(&r.text);
        ids.push(r.id);
        labels.push(r.label);
    }
    Batch {
        ids,
        v: Tensor::new(vec![indices.len(), d_v], v).expect("homogeneous records"),
        t: Tensor::new(vec![indices.len(), d_t], t).expect("homogeneous records"),
        labels,
    }
}

pub fn make_batches(
    records: &[EmbeddingRecord],
    batch_size: usize,
    rng: &mut RngState,
    drop_last: bool,
) -> Result<Vec<Batch>> {
    super::check_homogeneous(records)?;
    Ok(batch_indices(records.len(), batch_size, rng, drop_last)?
        .iter()
        .map(|idx| gather_batch(records, idx))
        .collect())
}

/// Deterministic split by id hash: a record is held out when its hash falls
/// in the lowest `holdout_fraction` of the 64-bit range.
pub fn holdout_split(records: &[EmbeddingRecord], holdout_fraction: f64) -> (Vec<EmbeddingRecord>, Vec<EmbeddingRecord>) {
    let cut = (holdout_fraction.clamp(0.0, 1.0) * u64::MAX as f64) as u64;
    records
        .iter()
        .cloned()
        .partition(|r| fnv1a64(&r.id.to_le_bytes()) >= cut)
}
