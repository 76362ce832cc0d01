use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{Metrics, TrainConfig};
use crate::binio::write_atomic;
use crate::error::Result;
use crate::fusion::ParamCount;

/// Git-style object hash, `sha256("blob <len>\0" ++ bytes)`, in hex.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Machine-readable record of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub seed: u64,
    pub data_path: Option<String>,
    pub data_hash: Option<String>,
    pub train_size: usize,
    pub holdout_size: usize,
    pub steps: u64,
    pub params: ParamCount,
    pub final_metrics: Option<Metrics>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json();
        s.push('\n');
        write_atomic(path, s.as_bytes())
    }
}
