//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "MTLQ" | u32 version | [u8; 32] config digest | u32 record count
//! per record: u32 name length | name (UTF-8) | u32 rank | u32 dims[rank] | f32 payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MTLQ";
pub const FORMAT_VERSION: u32 = 1;

pub type Digest = [u8; 32];

pub fn digest_hex(d: &Digest) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_checkpoint(path: &Path, store: &ParamStore, digest: &Digest) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, store, digest).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode<W: Write>(w: &mut W, store: &ParamStore, digest: &Digest) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(digest)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint, returning the stored config digest and parameters.
pub fn read_checkpoint(path: &Path) -> Result<(Digest, ParamStore)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    decode(&mut r).map_err(|e| match e {
        DecodeError::Io(e) => Error::io(path, e),
        DecodeError::Format(m) => Error::Integrity(format!("{}: {m}", path.display())),
    })
}

enum DecodeError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for DecodeError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DecodeError::Format("truncated checkpoint".into())
        } else {
            DecodeError::Io(e)
        }
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::result::Result<u32, DecodeError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn decode<R: Read>(r: &mut R) -> std::result::Result<(Digest, ParamStore), DecodeError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DecodeError::Format("bad magic bytes".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(DecodeError::Format(format!("unsupported format version {version}")));
    }
    let mut digest = [0u8; 32];
    r.read_exact(&mut digest)?;
    let count = read_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| DecodeError::Format("parameter name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| DecodeError::Format(format!("`{name}`: {e}")))?;
        store
            .insert(name, tensor)
            .map_err(|e| DecodeError::Format(e.to_string()))?;
    }
    Ok((digest, store))
}
