//! Prior box over the physical parameters and the map to network
//! coordinates in `[-1, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DatasetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bound {
    pub min: f64,
    pub max: f64,
    pub scale: Scale,
}

impl Bound {
    pub const fn linear(min: f64, max: f64) -> Self {
        Self {
            min,
            max,
            scale: Scale::Linear,
        }
    }

    pub const fn log(min: f64, max: f64) -> Self {
        Self {
            min,
            max,
            scale: Scale::Log,
        }
    }

    fn warp(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => v,
            Scale::Log => v.ln(),
        }
    }

    fn unwarp(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => v,
            Scale::Log => v.exp(),
        }
    }

    /// Physical value to `[-1, 1]`, clamping out-of-range input. The flag
    /// reports whether clamping happened.
    pub fn to_unit(&self, v: f64) -> (f64, bool) {
        let c = v.clamp(self.min, self.max);
        let (lo, hi) = (self.warp(self.min), self.warp(self.max));
        (2.0 * (self.warp(c) - lo) / (hi - lo) - 1.0, c != v)
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        let (lo, hi) = (self.warp(self.min), self.warp(self.max));
        let v = self.unwarp(lo + (u + 1.0) * 0.5 * (hi - lo));
        match u {
            u if u == -1.0 => self.min,
            u if u == 1.0 => self.max,
            _ => v,
        }
    }
}

/// Independent per-parameter bounds in `kT, N, Γ, f_sc, N_H` order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorBox {
    pub bounds: [Bound; 5],
}

impl Default for PriorBox {
    fn default() -> Self {
        Self {
            bounds: [
                Bound::linear(0.1, 2.5),
                Bound::log(10.0, 1e5),
                Bound::linear(1.3, 3.5),
                Bound::log(1e-3, 1.0),
                Bound::log(0.01, 10.0),
            ],
        }
    }
}

impl PriorBox {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (i, b) in self.bounds.iter().enumerate() {
            if !(b.min < b.max) || !b.min.is_finite() || !b.max.is_finite() {
                return Err(DatasetError::Invalid(format!(
                    "prior bound {i}: need min < max"
                )));
            }
            if b.scale == Scale::Log && b.min <= 0.0 {
                return Err(DatasetError::Invalid(format!(
                    "prior bound {i}: log scale needs min > 0"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64; 5]) -> bool {
        p.iter()
            .zip(&self.bounds)
            .all(|(v, b)| (b.min..=b.max).contains(v))
    }
}

/// Map physical parameters to network coordinates, returning the number of
/// clamped coordinates.
pub fn params_to_unit(p: &[f64; 5], b: &PriorBox) -> ([f64; 5], usize) {
    let mut out = [0.0; 5];
    let mut clamped = 0;
    for i in 0..5 {
        let (u, c) = b.bounds[i].to_unit(p[i]);
        out[i] = u;
        clamped += usize::from(c);
    }
    (out, clamped)
}

pub fn unit_to_params(u: &[f64; 5], b: &PriorBox) -> [f64; 5] {
    let mut out = [0.0; 5];
    for i in 0..5 {
        out[i] = b.bounds[i].from_unit(u[i]);
    }
    out
}

/// `n` independent draws, uniform in each coordinate's warped scale.
pub fn sample_prior(b: &PriorBox, n: usize, seed: u64) -> Vec<[f64; 5]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut u = [0.0; 5];
            u.iter_mut().for_each(|v| *v = rng.random_range(-1.0..=1.0));
            unit_to_params(&u, b)
        })
        .collect()
}
