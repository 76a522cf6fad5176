//! Binary parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CPF1" | version u32 | parameter count u64 | metadata length u32 | metadata JSON
//! then per parameter:
//!   name length u16 | UTF-8 name | rank u8 | dims u32 × rank | f32 data
//! ```
//!
//! Adam moments go to a sibling file (`<checkpoint>.adam`) with the same
//! layout; records are named `<param>#m` and `<param>#v`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::adam::{AdamConfig, AdamState};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CPF1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: Value,
    pub params: ParamStore,
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format(format!("{}: {}", path.display(), msg.into()))
}

pub fn encode(metadata: &Value, records: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(metadata).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for (name, t) in records {
        let name_bytes = name.as_bytes();
        let name_len = u16::try_from(name_bytes.len())
            .map_err(|_| Error::Format(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name_bytes);
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| Error::Format(format!("rank too large for {name}")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::Format(format!("dimension too large for {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(format_err(self.path, "truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8], path: &Path) -> Result<(Value, Vec<(String, Tensor)>)> {
    let mut c = Cursor { buf, pos: 0, path };
    if c.take(4)? != MAGIC {
        return Err(format_err(path, "bad magic, not a CPF1 checkpoint"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Version(format!(
            "{}: checkpoint version {version}, expected {VERSION}",
            path.display()
        )));
    }
    let count = c.u64()?;
    let meta_len = c.u32()? as usize;
    let metadata: Value = serde_json::from_slice(c.take(meta_len)?)
        .map_err(|e| format_err(path, format!("metadata: {e}")))?;
    let mut records = Vec::new();
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| format_err(path, "parameter name is not UTF-8"))?
            .to_owned();
        let rank = c.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = c.take(n * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != buf.len() {
        return Err(format_err(path, "trailing bytes after last record"));
    }
    Ok((metadata, records))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub fn adam_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".adam");
    PathBuf::from(s)
}

pub fn save(path: &Path, metadata: &Value, params: &ParamStore) -> Result<()> {
    let records: Vec<_> = params
        .names()
        .iter()
        .cloned()
        .zip(params.values())
        .collect();
    write_file(path, &encode(metadata, &records)?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let buf = read_file(path)?;
    let (metadata, records) = decode(&buf, path)?;
    let mut params = ParamStore::new();
    for (name, t) in records {
        params.add(name, t);
    }
    Ok(Checkpoint { metadata, params })
}

/// Copies checkpoint values into an existing store, matching by name and
/// shape. Every parameter of `target` must be present.
pub fn restore_into(target: &mut ParamStore, loaded: &ParamStore, path: &Path) -> Result<()> {
    let ids: Vec<_> = target.ids().collect();
    for id in ids {
        let name = target.name(id).to_owned();
        let src = loaded
            .find(&name)
            .ok_or_else(|| format_err(path, format!("missing parameter `{name}`")))?;
        let src = loaded.get(src);
        if src.shape() != target.get(id).shape() {
            return Err(Error::Version(format!(
                "{}: parameter `{name}` has shape {:?}, model expects {:?}",
                path.display(),
                src.shape(),
                target.get(id).shape()
            )));
        }
        *target.get_mut(id) = src.clone();
    }
    Ok(())
}

pub fn save_adam(checkpoint: &Path, params: &ParamStore, adam: &AdamState) -> Result<()> {
    let metadata = serde_json::json!({
        "step": adam.step_count(),
        "adam": adam.config,
    });
    let mut records = Vec::new();
    for ((name, m), v) in params
        .names()
        .iter()
        .zip(adam.first_moments())
        .zip(adam.second_moments())
    {
        records.push((format!("{name}#m"), m));
        records.push((format!("{name}#v"), v));
    }
    write_file(&adam_path(checkpoint), &encode(&metadata, &records)?)
}

pub fn load_adam(checkpoint: &Path, params: &ParamStore) -> Result<AdamState> {
    let path = adam_path(checkpoint);
    let buf = read_file(&path)?;
    let (metadata, records) = decode(&buf, &path)?;
    let step = metadata["step"]
        .as_u64()
        .ok_or_else(|| format_err(&path, "missing step count"))?;
    let config: AdamConfig = serde_json::from_value(metadata["adam"].clone())
        .map_err(|e| format_err(&path, format!("adam config: {e}")))?;
    let lookup = |key: String| {
        records
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| format_err(&path, format!("missing moment `{key}`")))
    };
    let mut m = Vec::new();
    let mut v = Vec::new();
    for name in params.names() {
        m.push(lookup(format!("{name}#m"))?);
        v.push(lookup(format!("{name}#v"))?);
    }
    Ok(AdamState::from_parts(config, step, m, v))
}
