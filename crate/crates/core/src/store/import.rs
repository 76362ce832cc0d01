//! Tab-separated import of externally extracted embeddings:
//! `id <TAB> label <TAB> image floats (comma-separated) <TAB> text floats`.
//!
//! A label of `-` or an empty field means no label; an unsigned integer is a
//! class index; anything else must parse as a float. If any record carries a
//! float label, class labels are promoted to floats so the set stays
//! homogeneous. Blank lines and lines starting with `#` are skipped.

use std::path::Path;

use super::{check_homogeneous, normalize_and_ingest, EmbeddingRecord, Label, LabelKind};
use crate::error::{Error, Result};

fn floats(field: &str, line: usize, what: &str) -> Result<Vec<f64>> {
    field
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                reason: format!("{what}: {s:?}: {e}"),
            })
        })
        .collect()
}

pub fn parse_tsv(text: &str) -> Result<Vec<EmbeddingRecord>> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line,
                reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = fields[0].trim().parse::<u64>().map_err(|e| Error::Parse {
            line,
            reason: format!("id {:?}: {e}", fields[0]),
        })?;
        let label = match fields[1].trim() {
            "" | "-" => Label::None,
            s => match s.parse::<u32>() {
                Ok(c) => Label::Class(c),
                Err(_) => Label::Scalar(s.parse::<f32>().map_err(|e| Error::Parse {
                    line,
                    reason: format!("label {s:?}: {e}"),
                })?),
            },
        };
        let image = floats(fields[2], line, "image vector")?;
        let text = floats(fields[3], line, "text vector")?;
        records.push(normalize_and_ingest(&image, &text, id, label)?);
    }
    if records.iter().any(|r| r.label.kind() == LabelKind::Scalar) {
        for r in &mut records {
            if let Label::Class(c) = r.label {
                r.label = Label::Scalar(c as f32);
            }
        }
    }
    check_homogeneous(&records)?;
    Ok(records)
}

pub fn import_tsv(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text)
}
