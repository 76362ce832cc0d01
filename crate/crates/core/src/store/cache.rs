//! Binary embedding cache.
//!
//! A 32-byte little-endian header followed by fixed-width records:
//!
//! ```text
//! 0  [u8; 4] "FRVL"      4  u16 version      6  u8 dtype (0 f32, 1 f16)
//! 7  u8 label kind (0 none, 1 class, 2 scalar)
//! 8  u32 d_v            12  u32 d_t         16  u64 record count
//! 24 [u8; 8] reserved, zero
//! record: u64 id, d_v image values, d_t text values, label (u32 class or
//!         f32 scalar; absent for none)
//! ```

use std::path::Path;

use half::f16;
use serde::Serialize;

use super::{check_homogeneous, norm, EmbeddingRecord, Label, LabelKind};
use crate::binio::{read_file, write_atomic, Container, Cursor};
use crate::error::Result;

pub const CACHE_MAGIC: &[u8; 4] = b"FRVL";
pub const CACHE_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 32;

/// Largest deviation from unit norm accepted for a stored f32 vector.
const STORED_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    F32,
    F16,
}

impl DType {
    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }

    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F16 => 1,
        }
    }
}

impl std::str::FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "f32" => Ok(DType::F32),
            "f16" => Ok(DType::F16),
            other => Err(format!("unknown dtype {other:?}, expected f32 or f16")),
        }
    }
}

fn label_code(kind: LabelKind) -> u8 {
    match kind {
        LabelKind::None => 0,
        LabelKind::Class => 1,
        LabelKind::Scalar => 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheHeader {
    pub version: u16,
    pub dtype: DType,
    pub label_kind: LabelKind,
    pub d_v: u32,
    pub d_t: u32,
    pub record_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheSummary {
    pub bytes_written: u64,
    pub record_count: u64,
}

/// Bytes per record for the given dimensions.
pub fn record_size(d_v: usize, d_t: usize, dtype: DType, label: LabelKind) -> usize {
    let label_bytes = if label == LabelKind::None { 0 } else { 4 };
    8 + (d_v + d_t) * dtype.width() + label_bytes
}

fn put_vec(out: &mut Vec<u8>, v: &[f32], dtype: DType) {
    match dtype {
        DType::F32 => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        DType::F16 => v.iter().for_each(|x| out.extend_from_slice(&f16::from_f32(*x).to_le_bytes())),
    }
}

pub fn encode_cache(records: &[EmbeddingRecord], dtype: DType) -> Result<Vec<u8>> {
    let (d_v, d_t, kind) = check_homogeneous(records)?;
    let mut out = Vec::with_capacity(HEADER_BYTES + records.len() * record_size(d_v, d_t, dtype, kind));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(label_code(kind));
    out.extend_from_slice(&(d_v as u32).to_le_bytes());
    out.extend_from_slice(&(d_t as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&[0u8; 8]);
    for r in records {
        out.extend_from_slice(&r.id.to_le_bytes());
        put_vec(&mut out, &r.image, dtype);
        put_vec(&mut out, &r.text, dtype);
        match r.label {
            Label::None => {}
            Label::Class(c) => out.extend_from_slice(&c.to_le_bytes()),
            Label::Scalar(s) => out.extend_from_slice(&s.to_le_bytes()),
        }
    }
    Ok(out)
}

pub fn write_cache(records: &[EmbeddingRecord], path: &Path, dtype: DType) -> Result<CacheSummary> {
    let bytes = encode_cache(records, dtype)?;
    write_atomic(path, &bytes)?;
    Ok(CacheSummary {
        bytes_written: bytes.len() as u64,
        record_count: records.len() as u64,
    })
}

fn decode_header(c: &mut Cursor<'_>) -> Result<CacheHeader> {
    if c.array::<4>("magic")? != *CACHE_MAGIC {
        return Err(Container::Cache.corrupt(0, "bad magic"));
    }
    let version = c.u16("version")?;
    if version != CACHE_VERSION {
        return Err(Container::Cache.corrupt(4, format!("unsupported version {version}")));
    }
    let dtype = match c.u8("dtype")? {
        0 => DType::F32,
        1 => DType::F16,
        x => return Err(Container::Cache.corrupt(6, format!("unknown dtype code {x}"))),
    };
    let label_kind = match c.u8("label kind")? {
        0 => LabelKind::None,
        1 => LabelKind::Class,
        2 => LabelKind::Scalar,
        x => return Err(Container::Cache.corrupt(7, format!("unknown label kind code {x}"))),
    };
    let d_v = c.u32("d_v")?;
    let d_t = c.u32("d_t")?;
    let record_count = c.u64("record count")?;
    c.take(8, "reserved")?;
    Ok(CacheHeader {
        version,
        dtype,
        label_kind,
        d_v,
        d_t,
        record_count,
    })
}

fn read_vec(c: &mut Cursor<'_>, d: usize, dtype: DType, what: &str) -> Result<Vec<f32>> {
    match dtype {
        DType::F32 => c.f32s(d, what),
        DType::F16 => {
            let raw = c.take(d * 2, what)?;
            let v: Vec<f32> = raw
                .chunks_exact(2)
                .map(|b| f16::from_le_bytes([b[0], b[1]]).to_f32())
                .collect();
            let n = norm(&v);
            if !(n > 0.0) {
                return Err(c.corrupt(format!("{what} has zero norm")));
            }
            Ok(v.iter().map(|x| (*x as f64 / n) as f32).collect())
        }
    }
}

pub fn decode_cache(bytes: &[u8]) -> Result<(CacheHeader, Vec<EmbeddingRecord>)> {
    let mut c = Cursor::new(bytes, Container::Cache);
    let header = decode_header(&mut c)?;
    let (d_v, d_t) = (header.d_v as usize, header.d_t as usize);
    let size = record_size(d_v, d_t, header.dtype, header.label_kind);
    let expected = (header.record_count as u128) * size as u128 + HEADER_BYTES as u128;
    if expected != bytes.len() as u128 {
        let at = HEADER_BYTES + ((bytes.len() - HEADER_BYTES) / size) * size;
        return Err(Container::Cache.corrupt(
            at.min(bytes.len()),
            format!("file has {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    if header.record_count > 0 && (d_v == 0 || d_t == 0) {
        return Err(Container::Cache.corrupt(8, "zero embedding dimension"));
    }
    let mut records = Vec::with_capacity(header.record_count as usize);
    let mut seen = std::collections::HashSet::with_capacity(records.capacity());
    for _ in 0..header.record_count {
        let start = c.pos();
        let id = c.u64("id")?;
        if !seen.insert(id) {
            return Err(Container::Cache.corrupt(start, format!("duplicate id {id}")));
        }
        let image = read_vec(&mut c, d_v, header.dtype, "image vector")?;
        let text = read_vec(&mut c, d_t, header.dtype, "text vector")?;
        for v in [&image, &text] {
            if (norm(v) - 1.0).abs() > STORED_NORM_TOLERANCE {
                return Err(Container::Cache.corrupt(start, format!("record {id} is not unit-norm")));
            }
        }
        let label = match header.label_kind {
            LabelKind::None => Label::None,
            LabelKind::Class => Label::Class(c.u32("class label")?),
            LabelKind::Scalar => Label::Scalar(f32::from_le_bytes(c.array("scalar label")?)),
        };
        records.push(EmbeddingRecord { id, image, text, label });
    }
    Ok((header, records))
}

pub fn read_cache(path: &Path) -> Result<(CacheHeader, Vec<EmbeddingRecord>)> {
    decode_cache(&read_file(path)?)
}
