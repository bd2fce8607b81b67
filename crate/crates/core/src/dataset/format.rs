//! `FSPN` dataset files.
//!
//! Layout (little-endian): magic `FSPN`, `u32` version, `u64` rows, `u64`
//! bins, `u8` noisy flag, `u8` per-row-exposure flag; response descriptor as
//! `u64` anchor count, `(f64, f64)` anchors, `f64` resolution coefficient,
//! `f64` exposure; normalisation as `f64` mean, std, reference exposure.
//! Then counts `f32 [n, bins]`, uncertainties `f32 [n, bins]`, parameters
//! `f64 [n, 5]`, and per-row exposures `f64 [n]` when flagged.

use std::path::Path;

use super::{Dataset, DatasetError, Normalization};
use crate::binio::{ByteReader, Truncated};
use crate::physics::ResponseDescriptor;

pub const MAGIC: &[u8; 4] = b"FSPN";
pub const FORMAT_VERSION: u32 = 1;
const MAX_ANCHORS: u64 = 4096;

impl From<Truncated> for DatasetError {
    fn from(t: Truncated) -> Self {
        Self::Truncated {
            offset: t.offset,
            needed: t.needed,
        }
    }
}

/// Encoded size in bytes.
pub fn encoded_len(n: usize, n_bins: usize, n_anchors: usize, per_row_exposure: bool) -> usize {
    header_len(n_anchors)
        + 2 * n * n_bins * 4
        + n * 5 * 8
        + if per_row_exposure { n * 8 } else { 0 }
}

pub fn header_len(n_anchors: usize) -> usize {
    4 + 4 + 8 + 8 + 1 + 1 + 8 + 16 * n_anchors + 5 * 8
}

pub fn to_bytes(ds: &Dataset) -> Vec<u8> {
    let n = ds.len();
    let mut out = Vec::with_capacity(96 + n * (ds.n_bins * 8 + 48));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(ds.n_bins as u64).to_le_bytes());
    out.push(u8::from(ds.noisy));
    out.push(u8::from(ds.exposures.is_some()));
    let r = &ds.response;
    out.extend_from_slice(&(r.anchors.len() as u64).to_le_bytes());
    for &(e, a) in &r.anchors {
        out.extend_from_slice(&e.to_le_bytes());
        out.extend_from_slice(&a.to_le_bytes());
    }
    for v in [
        r.sigma_coeff,
        r.exposure,
        ds.norm.mean,
        ds.norm.std,
        ds.norm.reference_exposure,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in ds.counts.iter().chain(&ds.uncertainty) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in ds.params.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(e) = &ds.exposures {
        for v in e {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn flag(v: u8, what: &str) -> Result<bool, DatasetError> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(DatasetError::Invalid(format!(
            "{what} flag must be 0 or 1, got {v}"
        ))),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Dataset, DatasetError> {
    let mut r = ByteReader::new(bytes);
    if r.bytes(4).map_err(|_| DatasetError::BadMagic)? != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::UnsupportedVersion(version));
    }
    let n = r.u64()?;
    let n_bins = r.u64()?;
    let noisy = flag(r.u8()?, "noisy")?;
    let has_exposures = flag(r.u8()?, "exposure")?;
    let n_anchors = r.u64()?;
    if n_anchors > MAX_ANCHORS {
        return Err(DatasetError::Invalid(format!(
            "{n_anchors} response anchors"
        )));
    }
    let n_anchors = r.check_block(n_anchors, 16)?;
    let mut anchors = Vec::with_capacity(n_anchors);
    for _ in 0..n_anchors {
        anchors.push((r.f64()?, r.f64()?));
    }
    let response = ResponseDescriptor {
        anchors,
        sigma_coeff: r.f64()?,
        exposure: r.f64()?,
    };
    let norm = Normalization {
        mean: r.f64()?,
        std: r.f64()?,
        reference_exposure: r.f64()?,
    };
    if n_bins == 0 {
        return Err(DatasetError::Invalid("zero bins".into()));
    }
    let cells = n
        .checked_mul(n_bins)
        .ok_or_else(|| DatasetError::Invalid("row count overflows".into()))?;
    let per_row = 8 * n_bins as u128 + 40 + if has_exposures { 8 } else { 0 };
    let body = per_row * n as u128;
    if body > r.remaining() as u128 {
        let needed = usize::try_from(body).unwrap_or(usize::MAX);
        return Err(DatasetError::Truncated {
            offset: bytes.len() - r.remaining(),
            needed,
        });
    }
    let cells = r.check_block(cells, 4)?;
    let read_f32 = |r: &mut ByteReader, k: usize| -> Result<Vec<f32>, DatasetError> {
        (0..k)
            .map(|_| r.f32().map_err(DatasetError::from))
            .collect()
    };
    let counts = read_f32(&mut r, cells)?;
    let uncertainty = read_f32(&mut r, cells)?;
    let n = n as usize;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = [0.0; 5];
        for v in p.iter_mut() {
            *v = r.f64()?;
        }
        params.push(p);
    }
    let exposures = if has_exposures {
        Some((0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?)
    } else {
        None
    };
    if r.remaining() != 0 {
        return Err(DatasetError::TrailingBytes(r.remaining()));
    }
    Ok(Dataset {
        n_bins: n_bins as usize,
        noisy,
        response,
        norm,
        counts,
        uncertainty,
        params,
        exposures,
    })
}

pub fn save(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    std::fs::write(path, to_bytes(ds))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    from_bytes(&std::fs::read(path)?)
}
