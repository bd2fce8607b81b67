//! `FSPC` checkpoint files.
//!
//! Layout (little-endian): magic `FSPC`, `u32` version, `u64` entry count;
//! then per entry `u64` name length, UTF-8 name, `u64` rank, `u64` dims,
//! and the values as `f64`. Entries are written in name order.

use std::path::Path;

use thiserror::Error;

use super::{ParamStore, Tensor};
use crate::binio::{ByteReader, Truncated};

pub const MAGIC: &[u8; 4] = b"FSPC";
pub const VERSION: u32 = 1;
const MAX_RANK: u64 = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: expected FSPC")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint at byte {offset} (needed {needed} more)")]
    Truncated { offset: usize, needed: usize },
    #[error("entry name is not valid UTF-8")]
    InvalidName,
    #[error("duplicate entry `{0}`")]
    DuplicateName(String),
    #[error("entry `{name}` has unsupported rank {rank}")]
    BadRank { name: String, rank: u64 },
    #[error("entry `{0}` has an element count that overflows")]
    BadShape(String),
    #[error("{0} trailing bytes after last entry")]
    TrailingBytes(usize),
    #[error("checkpoint is missing parameter `{0}`")]
    Missing(String),
    #[error(transparent)]
    Model(#[from] super::AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<Truncated> for CheckpointError {
    fn from(t: Truncated) -> Self {
        Self::Truncated {
            offset: t.offset,
            needed: t.needed,
        }
    }
}

pub fn to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.n_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, e) in store.iter() {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(e.value.rank() as u64).to_le_bytes());
        for &d in e.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in e.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse a checkpoint. Every entry comes back unfrozen with fresh optimizer
/// state.
pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore, CheckpointError> {
    let mut r = ByteReader::new(bytes);
    if r.bytes(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = r.u64()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u64()?;
        let name_len = r.check_block(name_len, 1)?;
        let name = std::str::from_utf8(r.bytes(name_len)?)
            .map_err(|_| CheckpointError::InvalidName)?
            .to_string();
        let rank = r.u64()?;
        if rank > MAX_RANK {
            return Err(CheckpointError::BadRank { name, rank });
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut total: Option<u64> = Some(1);
        for _ in 0..rank {
            let d = r.u64()?;
            total = total.and_then(|t| t.checked_mul(d));
            dims.push(usize::try_from(d).unwrap_or(usize::MAX));
        }
        let Some(total) = total else {
            return Err(CheckpointError::BadShape(name));
        };
        let n = r.check_block(total, 8)?;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.f64()?);
        }
        if store.entry(&name).is_some() {
            return Err(CheckpointError::DuplicateName(name));
        }
        store.insert(name, Tensor::new(&dims, values)?)?;
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(store))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore, CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}

/// Copy checkpoint values into `model`, requiring every name in `required`
/// (by prefix) to be present.
pub fn restore_into(
    model: &mut ParamStore,
    ckpt: &ParamStore,
    required_prefix: &str,
) -> Result<usize, CheckpointError> {
    if let Some(missing) = model
        .names()
        .filter(|n| n.starts_with(required_prefix))
        .find(|n| ckpt.entry(n).is_none())
    {
        return Err(CheckpointError::Missing(missing.to_string()));
    }
    Ok(model.load_values_from(ckpt)?)
}
