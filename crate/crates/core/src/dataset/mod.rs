//! Synthetic datasets: prior sampling, generation, preprocessing, splitting
//! and the `FSPN` file format.

mod format;
mod prior;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::physics::{
    self, EnergyGrid, PhysParams, PhysicsError, ResponseDescriptor, ResponseModel, Spectrum,
};
pub use format::{
    encoded_len, from_bytes, header_len, load, save, to_bytes, FORMAT_VERSION, MAGIC,
};
pub use prior::{params_to_unit, sample_prior, unit_to_params, Bound, PriorBox, Scale};

/// Counts below this are raised to it before taking logarithms.
pub const COUNT_FLOOR: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad magic: expected FSPN")]
    BadMagic,
    #[error("unsupported dataset version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated dataset at byte {offset} (needed {needed} more)")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after dataset body")]
    TrailingBytes(usize),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("forward model failed on row {row}: {source}")]
    Generation { row: usize, source: PhysicsError },
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Global standardisation of log-counts, measured on a training set and
/// scaled to a reference exposure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
    pub reference_exposure: f64,
}

impl Normalization {
    pub fn identity(reference_exposure: f64) -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
            reference_exposure,
        }
    }

    fn scale(&self, exposure: f64) -> f64 {
        self.reference_exposure / exposure
    }
}

/// Network input and its uncertainty for one spectrum. Counts are rescaled
/// to the reference exposure, floored at [`COUNT_FLOOR`], and standardised in
/// `log10`.
pub fn preprocess(
    counts: &[f64],
    uncertainty: &[f64],
    exposure: f64,
    norm: &Normalization,
) -> (Vec<f64>, Vec<f64>) {
    let s = norm.scale(exposure);
    let ln10 = std::f64::consts::LN_10;
    counts
        .iter()
        .zip(uncertainty)
        .map(|(&c, &u)| {
            let c = (c * s).max(COUNT_FLOOR);
            (
                (c.log10() - norm.mean) / norm.std,
                u * s / (c * ln10 * norm.std),
            )
        })
        .unzip()
}

/// Inverse of [`preprocess`] for the counts (exact above the floor).
pub fn unpreprocess(x: &[f64], exposure: f64, norm: &Normalization) -> Vec<f64> {
    let s = norm.scale(exposure);
    x.iter()
        .map(|v| 10f64.powf(v * norm.std + norm.mean) / s)
        .collect()
}

/// Exposure assignment during generation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExposurePolicy {
    /// Every row uses the response's default exposure.
    Fixed,
    /// Per-row exposure uniform in `[min, max]` seconds.
    Uniform { min: f64, max: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub prior: PriorBox,
    pub n: usize,
    pub n_bins: usize,
    pub response: ResponseDescriptor,
    pub noisy: bool,
    pub exposure: ExposurePolicy,
    pub seed: u64,
    pub workers: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            prior: PriorBox::default(),
            n: 1000,
            n_bins: 240,
            response: ResponseDescriptor::default(),
            noisy: false,
            exposure: ExposurePolicy::Fixed,
            seed: 0,
            workers: 1,
        }
    }
}

/// Spectra, their uncertainties and generating parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n_bins: usize,
    pub noisy: bool,
    pub response: ResponseDescriptor,
    pub norm: Normalization,
    /// Row-major `[n, n_bins]`.
    pub counts: Vec<f32>,
    pub uncertainty: Vec<f32>,
    /// Physical units, `kT, N, Γ, f_sc, N_H`.
    pub params: Vec<[f64; 5]>,
    /// Per-row exposures when they differ from the response default.
    pub exposures: Option<Vec<f64>>,
}

/// Network-ready arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedBatch {
    pub n: usize,
    pub n_bins: usize,
    /// `[n, n_bins]` standardised log-counts.
    pub x: Vec<f64>,
    /// `[n, n_bins]` standardised uncertainties.
    pub sigma: Vec<f64>,
    /// `[n, 5]` parameters in `[-1, 1]`.
    pub theta: Vec<f64>,
    /// Coordinates clamped into the prior box.
    pub clamped: usize,
}

/// SplitMix64 finaliser of `seed` and `index`: well-separated per-row seeds.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn row_counts(&self, i: usize) -> &[f32] {
        &self.counts[i * self.n_bins..(i + 1) * self.n_bins]
    }

    pub fn row_uncertainty(&self, i: usize) -> &[f32] {
        &self.uncertainty[i * self.n_bins..(i + 1) * self.n_bins]
    }

    pub fn exposure(&self, i: usize) -> f64 {
        self.exposures
            .as_ref()
            .map_or(self.response.exposure, |e| e[i])
    }

    pub fn spectrum(&self, i: usize) -> Spectrum {
        Spectrum {
            counts: self.row_counts(i).iter().map(|&v| v as f64).collect(),
            uncertainty: self.row_uncertainty(i).iter().map(|&v| v as f64).collect(),
            exposure: self.exposure(i),
            noisy: self.noisy,
        }
    }

    /// Rows `indices` in the given order, keeping the normalisation.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut counts = Vec::with_capacity(indices.len() * self.n_bins);
        let mut uncertainty = Vec::with_capacity(indices.len() * self.n_bins);
        for &i in indices {
            counts.extend_from_slice(self.row_counts(i));
            uncertainty.extend_from_slice(self.row_uncertainty(i));
        }
        Dataset {
            n_bins: self.n_bins,
            noisy: self.noisy,
            response: self.response.clone(),
            norm: self.norm,
            counts,
            uncertainty,
            params: indices.iter().map(|&i| self.params[i]).collect(),
            exposures: self
                .exposures
                .as_ref()
                .map(|e| indices.iter().map(|&i| e[i]).collect()),
        }
    }

    /// Mean and standard deviation of floored, exposure-scaled log-counts
    /// over every bin of every row.
    pub fn compute_normalization(&self) -> Normalization {
        let reference = self.response.exposure;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for i in 0..self.len() {
            let s = reference / self.exposure(i);
            for &c in self.row_counts(i) {
                let v = (c as f64 * s).max(COUNT_FLOOR).log10();
                sum += v;
                sq += v * v;
            }
        }
        let n = (self.len() * self.n_bins).max(1) as f64;
        let mean = sum / n;
        let var = (sq / n - mean * mean).max(0.0);
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Normalization {
            mean,
            std,
            reference_exposure: reference,
        }
    }

    pub fn preprocess_row(&self, i: usize, norm: &Normalization) -> (Vec<f64>, Vec<f64>) {
        let s = self.spectrum(i);
        preprocess(&s.counts, &s.uncertainty, s.exposure, norm)
    }

    /// All rows preprocessed with this dataset's normalisation.
    pub fn normalized(&self, prior: &PriorBox) -> NormalizedBatch {
        let mut x = Vec::with_capacity(self.counts.len());
        let mut sigma = Vec::with_capacity(self.counts.len());
        let mut theta = Vec::with_capacity(self.len() * 5);
        let mut clamped = 0;
        for i in 0..self.len() {
            let (xi, si) = self.preprocess_row(i, &self.norm);
            x.extend(xi);
            sigma.extend(si);
            let (u, c) = params_to_unit(&self.params[i], prior);
            theta.extend_from_slice(&u);
            clamped += c;
        }
        NormalizedBatch {
            n: self.len(),
            n_bins: self.n_bins,
            x,
            sigma,
            theta,
            clamped,
        }
    }

    /// Write the generating parameters as CSV with header `kT,N,gamma,fsc,nH`.
    pub fn write_params_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        write_params_csv(std::fs::File::create(path)?, &self.params)
    }
}

pub fn write_params_csv(out: impl Write, params: &[[f64; 5]]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(physics::PARAM_NAMES)?;
    for p in params {
        w.write_record(p.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_params_csv(path: impl AsRef<Path>) -> Result<Vec<[f64; 5]>, DatasetError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(DatasetError::Invalid(format!(
                "parameter row has {} fields",
                rec.len()
            )));
        }
        let mut p = [0.0; 5];
        for (k, f) in rec.iter().enumerate() {
            p[k] = f
                .trim()
                .parse()
                .map_err(|_| DatasetError::Invalid(format!("bad number `{f}`")))?;
        }
        out.push(p);
    }
    Ok(out)
}

/// Rows `0..n` of a dataset: parameters from the prior stream, spectra from
/// per-row seeds, so any worker count yields identical bytes.
pub fn generate_dataset(cfg: &GenerateConfig) -> Result<Dataset, DatasetError> {
    if cfg.n == 0 {
        return Err(DatasetError::Invalid("need at least one spectrum".into()));
    }
    cfg.prior.validate()?;
    let response = ResponseModel::new(EnergyGrid::new(cfg.n_bins)?, cfg.response.clone())?;
    let params = sample_prior(&cfg.prior, cfg.n, cfg.seed);
    let exposures = match cfg.exposure {
        ExposurePolicy::Fixed => None,
        ExposurePolicy::Uniform { min, max } => {
            if !(min > 0.0 && min <= max) {
                return Err(DatasetError::Invalid(format!(
                    "exposure range [{min}, {max}]"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, u64::MAX));
            Some(
                (0..cfg.n)
                    .map(|_| rng.random_range(min..=max))
                    .collect::<Vec<f64>>(),
            )
        }
    };
    let row = |i: usize| -> Result<Spectrum, DatasetError> {
        let exposure = exposures.as_ref().map_or(cfg.response.exposure, |e| e[i]);
        physics::forward_model_with_exposure(
            &PhysParams::from_slice(&params[i]),
            &response,
            exposure,
            cfg.noisy,
            mix(cfg.seed, i as u64),
        )
        .map_err(|source| DatasetError::Generation { row: i, source })
    };
    let spectra: Vec<Spectrum> = crate::parallel::par_map(cfg.n, cfg.workers, row)?;
    let mut ds = Dataset {
        n_bins: cfg.n_bins,
        noisy: cfg.noisy,
        response: cfg.response.clone(),
        norm: Normalization::identity(cfg.response.exposure),
        counts: spectra
            .iter()
            .flat_map(|s| s.counts.iter().map(|&c| c as f32))
            .collect(),
        uncertainty: spectra
            .iter()
            .flat_map(|s| s.uncertainty.iter().map(|&c| c as f32))
            .collect(),
        params,
        exposures,
    };
    ds.norm = ds.compute_normalization();
    Ok(ds)
}

/// Seeded shuffle, then `round(n·(1-frac))` validation rows. The training
/// part gets freshly computed normalisation constants which the validation
/// part inherits.
pub fn split(ds: &Dataset, frac: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(DatasetError::Invalid(format!(
            "train fraction {frac} outside (0, 1)"
        )));
    }
    let n = ds.len();
    let n_val = (n as f64 * (1.0 - frac)).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(DatasetError::Invalid(format!(
            "{n} rows cannot be split at fraction {frac}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = ds.select(&idx[n_val..]);
    let mut val = ds.select(&idx[..n_val]);
    train.norm = train.compute_normalization();
    val.norm = train.norm;
    Ok((train, val))
}
