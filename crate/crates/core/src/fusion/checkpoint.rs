//! Parameter checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "FRVP"  u16 version  u16 reserved(0)
//! section*:  [u8; 4] tag  u64 length  payload
//! u64 FNV-1a of every preceding byte
//! ```
//!
//! Sections, in this order:
//! - `CONF` JSON object `{"config": FusionConfig, "flags": AblationFlags}`.
//! - `PARM` u32 tensor count, then per tensor u32 rank, u32 dims, f32 data;
//!   tensors follow [`FusionParams::named_tensors`] order.
//! - `OPTM` (optional) u64 step, f64 beta1 beta2 eps weight_decay, then the
//!   first-moment tensors and the second-moment tensors as raw f32 data,
//!   shaped like `PARM`.
//! - `TRST` (optional) opaque driver state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{AblationFlags, FusionConfig};
use super::params::FusionParams;
use crate::binio::{fnv1a64, put_f32s, read_file, write_atomic, Container, Cursor};
use crate::error::Result;
use crate::optim::{AdamWConfig, AdamWState};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FRVP";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: FusionParams<f32>,
    pub optimizer: Option<AdamWState<f32>>,
    pub train_state: Option<Vec<u8>>,
}

impl Checkpoint {
    pub fn params_only(params: FusionParams<f32>) -> Self {
        Self {
            params,
            optimizer: None,
            train_state: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Architecture {
    config: FusionConfig,
    flags: AblationFlags,
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let p = &ckpt.params;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());

    let arch = Architecture {
        config: p.config.clone(),
        flags: p.flags,
    };
    section(&mut out, b"CONF", &serde_json::to_vec(&arch).expect("config serializes"));

    let tensors = p.tensors();
    let mut parm = Vec::new();
    parm.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (_, t) in &tensors {
        parm.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            parm.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        put_f32s(&mut parm, t.data());
    }
    section(&mut out, b"PARM", &parm);

    if let Some(opt) = &ckpt.optimizer {
        let mut o = Vec::new();
        o.extend_from_slice(&opt.step.to_le_bytes());
        let c = opt.config;
        for x in [c.beta1, c.beta2, c.eps, c.weight_decay] {
            o.extend_from_slice(&x.to_le_bytes());
        }
        for t in opt.m.iter().chain(&opt.v) {
            put_f32s(&mut o, t.data());
        }
        section(&mut out, b"OPTM", &o);
    }
    if let Some(state) = &ckpt.train_state {
        section(&mut out, b"TRST", state);
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let kind = Container::Checkpoint;
    if bytes.len() < 16 {
        return Err(kind.corrupt(0, format!("file of {} bytes is too short", bytes.len())));
    }
    let body_len = bytes.len() - 8;
    let mut c = Cursor::new(&bytes[..body_len], kind);
    if c.array::<4>("magic")? != *MAGIC {
        return Err(kind.corrupt(0, "bad magic"));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(kind.corrupt(4, format!("unsupported version {version}")));
    }
    c.u16("reserved")?;
    let stored = u64::from_le_bytes(bytes[body_len..].try_into().unwrap());
    if stored != fnv1a64(&bytes[..body_len]) {
        return Err(kind.corrupt(body_len, "checksum mismatch"));
    }

    let mut sections: Vec<([u8; 4], usize, &[u8])> = Vec::new();
    while c.remaining() > 0 {
        let tag = c.array::<4>("section tag")?;
        let len = c.u64("section length")? as usize;
        let start = c.pos();
        sections.push((tag, start, c.take(len, "section payload")?));
    }
    let find = |tag: &[u8; 4]| sections.iter().find(|(t, _, _)| t == tag);

    let (_, conf_at, conf) = find(b"CONF").ok_or_else(|| kind.corrupt(8, "missing CONF section"))?;
    let arch: Architecture = serde_json::from_slice(conf)
        .map_err(|e| kind.corrupt(*conf_at, format!("bad architecture: {e}")))?;
    let mut params = FusionParams::<f32>::blank(&arch.config, &arch.flags)
        .map_err(|e| kind.corrupt(*conf_at, e.to_string()))?;

    let (_, parm_at, parm) = find(b"PARM").ok_or_else(|| kind.corrupt(8, "missing PARM section"))?;
    let mut pc = Cursor::new(parm, kind);
    let count = pc.u32("tensor count")? as usize;
    let expected = params.tensors().len();
    if count != expected {
        return Err(kind.corrupt(*parm_at, format!("{count} tensors, architecture needs {expected}")));
    }
    for (_, t) in params.tensors_mut() {
        let rank = pc.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(pc.u32("dim")? as usize);
        }
        if shape != t.shape() {
            return Err(kind.corrupt(parm_at + pc.pos(), format!("tensor shape {shape:?}, expected {:?}", t.shape())));
        }
        let data = pc.f32s(t.len(), "tensor data")?;
        *t = Tensor::new(shape, data)?;
    }

    let optimizer = match find(b"OPTM") {
        None => None,
        Some((_, _, o)) => {
            let mut oc = Cursor::new(o, kind);
            let step = oc.u64("step")?;
            let config = AdamWConfig {
                beta1: oc.f64("beta1")?,
                beta2: oc.f64("beta2")?,
                eps: oc.f64("eps")?,
                weight_decay: oc.f64("weight_decay")?,
            };
            let mut state = AdamWState::new(&params, config);
            state.step = step;
            for t in state.m.iter_mut().chain(state.v.iter_mut()) {
                let data = oc.f32s(t.len(), "moment data")?;
                t.data_mut().copy_from_slice(&data);
            }
            Some(state)
        }
    };
    let train_state = find(b"TRST").map(|(_, _, s)| s.to_vec());
    Ok(Checkpoint {
        params,
        optimizer,
        train_state,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<u64> {
    let bytes = encode(ckpt);
    write_atomic(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&read_file(path)?)
}
