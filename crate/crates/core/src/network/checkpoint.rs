use std::fs;
use std::path::Path;

use super::config::NetworkConfig;
use super::model::Network;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SPH3DCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Serialize the config echo, step counter, build seed and every tensor
/// (parameters and running statistics) as little-endian f64 with shape
/// headers.
pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let text = net.config().to_text();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&net.step().to_le_bytes());
    out.extend_from_slice(&net.seed().to_le_bytes());
    let tensors = net.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = r.u64()? as usize;
    let text = r.string(len)?;
    let config = NetworkConfig::parse(&text)
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let step = r.u64()?;
    let seed = r.u64()?;
    let mut net = Network::build(config, seed).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    net.set_step(step);
    let count = r.u32()? as usize;
    let shapes: Vec<Vec<usize>> = net.tensors().into_iter().map(|t| t.shape).collect();
    let mut slots = net.tensors_mut();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, network has {}",
            slots.len()
        )));
    }
    for ((name, data), shape) in slots.iter_mut().zip(&shapes) {
        let n = r.u32()? as usize;
        let stored = r.string(n)?;
        if &stored != name {
            return Err(Error::Checkpoint(format!("expected tensor `{name}`, found `{stored}`")));
        }
        let ndim = r.u32()? as usize;
        let stored_shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &stored_shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {stored_shape:?}, network expects {shape:?}"
            )));
        }
        for v in data.iter_mut() {
            *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    drop(slots);
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
