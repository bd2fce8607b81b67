//! Spectral forward model: absorbed, partially Comptonised disk blackbody
//! folded through a synthetic instrument response.

mod components;
mod grid;
mod response;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

pub use components::{
    absorb, diskbb_flux, diskbb_shape_constant, simpl_comptonize, transmission, ABSORPTION_SIGMA1,
    DISK_X_MIN,
};
pub use grid::{EnergyGrid, BAND_HI, BAND_LO, EXTENDED_HI};
pub use response::{apply_response, ResponseDescriptor, ResponseModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("{stage}: {message}")]
    Contract {
        stage: &'static str,
        message: String,
    },
}

impl PhysicsError {
    pub(crate) fn contract(stage: &'static str, message: impl Into<String>) -> Self {
        Self::Contract {
            stage,
            message: message.into(),
        }
    }
}

pub const PARAM_NAMES: [&str; 5] = ["kT", "N", "gamma", "fsc", "nH"];

/// Disk temperature (keV), disk normalisation, photon index, scattered
/// fraction and column density (10²² cm⁻²).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysParams {
    pub kt: f64,
    pub norm: f64,
    pub gamma: f64,
    pub fsc: f64,
    pub nh: f64,
}

impl PhysParams {
    pub fn to_array(self) -> [f64; 5] {
        [self.kt, self.norm, self.gamma, self.fsc, self.nh]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            kt: v[0],
            norm: v[1],
            gamma: v[2],
            fsc: v[3],
            nh: v[4],
        }
    }

    fn validate(&self) -> Result<(), PhysicsError> {
        let ok = self.kt > 0.0
            && self.norm >= 0.0
            && self.nh >= 0.0
            && self.to_array().iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(PhysicsError::contract(
                "params",
                format!("{self:?} outside the physical domain"),
            ))
        }
    }
}

/// Counts on the instrument grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub counts: Vec<f64>,
    pub uncertainty: Vec<f64>,
    pub exposure: f64,
    pub noisy: bool,
}

/// Unfolded source photon flux density on the extended grid.
pub fn source_flux(p: &PhysParams, grid: &EnergyGrid) -> Result<Vec<f64>, PhysicsError> {
    p.validate()?;
    let centers = grid.centers();
    let disk: Vec<f64> = centers
        .iter()
        .map(|&e| diskbb_flux(e, p.kt, p.norm))
        .collect();
    let scattered = simpl_comptonize(&disk, grid.extended_edges(), p.gamma, p.fsc)?;
    absorb(&scattered, &centers, p.nh)
}

/// Expected counts `λ` for `p` at the given exposure.
pub fn expected_counts(
    p: &PhysParams,
    r: &ResponseModel,
    exposure: f64,
) -> Result<Vec<f64>, PhysicsError> {
    r.fold(&source_flux(p, &r.grid)?, exposure)
}

/// Noiseless spectra carry `λ` with uncertainty `max(√λ, 1)`; noisy ones a
/// seeded Poisson realisation with `max(√counts, 1)`.
pub fn forward_model(
    p: &PhysParams,
    r: &ResponseModel,
    noisy: bool,
    seed: u64,
) -> Result<Spectrum, PhysicsError> {
    forward_model_with_exposure(p, r, r.exposure(), noisy, seed)
}

pub fn forward_model_with_exposure(
    p: &PhysParams,
    r: &ResponseModel,
    exposure: f64,
    noisy: bool,
    seed: u64,
) -> Result<Spectrum, PhysicsError> {
    let lambda = expected_counts(p, r, exposure)?;
    let counts = if noisy {
        poisson_realisation(&lambda, seed)
    } else {
        lambda
    };
    let uncertainty = counts.iter().map(|c| c.sqrt().max(1.0)).collect();
    Ok(Spectrum {
        counts,
        uncertainty,
        exposure,
        noisy,
    })
}

/// Independent Poisson draws with means `lambda` from one seeded stream.
pub fn poisson_realisation(lambda: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lambda
        .iter()
        .map(|&l| {
            if l > 0.0 {
                Poisson::new(l)
                    .map(|d| d.sample(&mut rng))
                    .unwrap_or(l.round())
            } else {
                0.0
            }
        })
        .collect()
}
