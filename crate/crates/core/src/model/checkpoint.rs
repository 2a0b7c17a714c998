//! The `KAEC` checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "KAEC" | u32 version | u32 config length | config JSON (UTF-8) | u32 parameter count
//! count × ( u32 path length | path bytes | u8 ndim | ndim × u32 extent | f64 values row-major )
//! ```
//!
//! Parameters are stored in creation order. Loading rebuilds the model from
//! the config and overwrites every parameter by path.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::dataset::{write_atomic, Reader};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KAEC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.config).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (_, p) in model.params.iter() {
        out.extend_from_slice(&(p.path.len() as u32).to_le_bytes());
        out.extend_from_slice(p.path.as_bytes());
        let shape = p.value.shape();
        out.push(shape.len() as u8);
        for &e in shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_checkpoint_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader::new(buf);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.pos();
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: at,
            msg: format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
        });
    }
    let len = r.u32()? as usize;
    let at = r.pos();
    let config: ModelConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format { offset: at, msg: format!("config: {e}") })?;
    let mut model = Model::new(config).map_err(|e| Error::Format { offset: at, msg: e.to_string() })?;
    let at = r.pos();
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Format {
            offset: at,
            msg: format!("{count} parameters stored, config defines {}", model.params.len()),
        });
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let at = r.pos();
        let plen = r.u32()? as usize;
        let path = String::from_utf8(r.take(plen)?.to_vec())
            .map_err(|_| Error::Format { offset: at, msg: "parameter path is not UTF-8".into() })?;
        let id = model
            .params
            .id(&path)
            .ok_or_else(|| Error::Format { offset: at, msg: format!("unknown parameter {path:?}") })?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return r.fail(format!("parameter {path:?} stored twice"));
        }
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let expected = model.params.value(id).shape().to_vec();
        if shape != expected {
            return r.fail(format!("parameter {path:?} has shape {shape:?}, expected {expected:?}"));
        }
        let data = r.f64s(shape.iter().product())?;
        model.params.set_value(id, Tensor::new(shape, data)?)?;
    }
    if r.remaining() != 0 {
        return r.fail(format!("{} trailing bytes", r.remaining()));
    }
    Ok(model)
}

impl Model {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_atomic(path, &to_checkpoint_bytes(self))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        from_checkpoint_bytes(&bytes)
    }
}
