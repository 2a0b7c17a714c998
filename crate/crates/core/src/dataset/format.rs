//! The `KAE1` trajectory container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "KAE1" | u32 version | u8 pde kind | u32 n | u32 T | f64 dt | f64 x_min | f64 x_max | u32 count
//! count × ( u8 family tag | u64 seed | T·n f64 row-major )
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::pde::{Grid, IcFamily, PdeKind, Trajectory};

pub const MAGIC: &[u8; 4] = b"KAE1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 8 + 8 + 8 + 4;

pub fn to_bytes(ds: &Dataset) -> Vec<u8> {
    let per = 1 + 8 + ds.steps * ds.grid.n * 8;
    let mut out = Vec::with_capacity(HEADER_LEN + per * ds.trajectories.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(ds.pde.tag());
    out.extend_from_slice(&(ds.grid.n as u32).to_le_bytes());
    out.extend_from_slice(&(ds.steps as u32).to_le_bytes());
    out.extend_from_slice(&ds.dt.to_le_bytes());
    out.extend_from_slice(&ds.grid.x_min.to_le_bytes());
    out.extend_from_slice(&ds.grid.x_max.to_le_bytes());
    out.extend_from_slice(&(ds.trajectories.len() as u32).to_le_bytes());
    for t in &ds.trajectories {
        out.push(t.ic_kind.tag());
        out.extend_from_slice(&t.seed.to_le_bytes());
        for v in t.states.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Little-endian cursor that reports the byte offset of any failure.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn pos(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format { offset: self.pos(), msg: msg.into() })
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return self.fail(format!("truncated: need {len} bytes, {} left", self.remaining()));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expected {
            self.pos -= 4;
            return self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(expected)
            ));
        }
        Ok(())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(buf);
    r.magic(MAGIC)?;
    let at = r.pos();
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: at,
            msg: format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        });
    }
    let at = r.pos();
    let tag = r.u8()?;
    let pde =
        PdeKind::from_tag(tag).ok_or_else(|| Error::Format { offset: at, msg: format!("unknown PDE tag {tag}") })?;
    let at = r.pos();
    let n = r.u32()? as usize;
    let steps = r.u32()? as usize;
    let dt = r.f64()?;
    let x_min = r.f64()?;
    let x_max = r.f64()?;
    let grid = Grid::new(n, x_min, x_max).map_err(|e| Error::Format { offset: at, msg: e.to_string() })?;
    if steps == 0 {
        return Err(Error::Format { offset: at, msg: "zero timesteps".into() });
    }
    let count = r.u32()? as usize;
    let per = 1 + 8 + steps * n * 8;
    if r.remaining() != count * per {
        return r
            .fail(format!("payload is {} bytes, header declares {count} trajectories of {per} bytes", r.remaining()));
    }
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos();
        let tag = r.u8()?;
        let ic_kind = IcFamily::from_tag(tag)
            .ok_or_else(|| Error::Format { offset: at, msg: format!("unknown family tag {tag}") })?;
        let seed = r.u64()?;
        let states = Tensor::matrix(steps, n, r.f64s(steps * n)?)?;
        trajectories.push(Trajectory { states, dt, ic_kind, seed });
    }
    Ok(Dataset { pde, grid, steps, dt, trajectories })
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(|e| Error::io(path, e))
}
