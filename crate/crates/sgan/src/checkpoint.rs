//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//! magic `SGANCKPT` (8 bytes), format version `u32`, config hash `u64`,
//! record count `u32`, then per tensor: name length `u32` + UTF-8 name,
//! rank `u32`, dims as `u32`, data as `f64` bit patterns. Round-trips are
//! bitwise lossless; no timestamps are stored.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::Networks;

const MAGIC: &[u8; 8] = b"SGANCKPT";
const VERSION: u32 = 1;

fn net_names() -> [&'static str; 5] {
    ["G", "I", "C", "Dxy", "Dxz"]
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save(path: &Path, config_hash: u64, nets: &Networks) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&config_hash.to_le_bytes());
    let parts = [&nets.g, &nets.i, &nets.c, &nets.dxy, &nets.dxz];
    let count: usize = parts.iter().map(|n| n.tensors.len()).sum();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, net) in net_names().iter().zip(parts) {
        for (i, t) in net.tensors.iter().enumerate() {
            write_tensor(&mut out, &format!("{name}.{i}"), t);
        }
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::Checkpoint(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(&out)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", path.display())))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

/// Raw checkpoint contents: named tensors plus the config hash the run
/// was trained under.
pub struct Loaded {
    pub config_hash: u64,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.display())))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.bytes(8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let config_hash = r.u64()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(r.bytes(8)?.try_into().unwrap()));
        }
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(Loaded { config_hash, tensors })
}

/// Restore parameters into freshly built networks, verifying that every
/// expected tensor is present with the right shape.
pub fn restore(loaded: &Loaded, nets: &mut Networks) -> Result<()> {
    let parts: [&mut crate::network::NetworkParams; 5] =
        [&mut nets.g, &mut nets.i, &mut nets.c, &mut nets.dxy, &mut nets.dxz];
    let mut cursor = 0usize;
    for (name, net) in net_names().iter().zip(parts) {
        for (i, t) in net.tensors.iter_mut().enumerate() {
            let expect = format!("{name}.{i}");
            let Some((got_name, got)) = loaded.tensors.get(cursor) else {
                return Err(Error::Checkpoint(format!("missing tensor {expect}")));
            };
            if got_name != &expect {
                return Err(Error::Checkpoint(format!("expected tensor {expect}, found {got_name}")));
            }
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "{expect}: shape {:?} does not match model {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
            *t = got.clone();
            cursor += 1;
        }
    }
    if cursor != loaded.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} extra tensors",
            loaded.tensors.len() - cursor
        )));
    }
    Ok(())
}
