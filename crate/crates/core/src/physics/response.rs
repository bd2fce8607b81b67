//! Synthetic instrument: Gaussian energy redistribution and an effective-area
//! curve.

use super::grid::EnergyGrid;
use super::PhysicsError;

/// Parameters from which a [`ResponseModel`] is rebuilt; stored in dataset
/// headers.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseDescriptor {
    /// `(energy keV, area cm²)` anchors, ascending in energy.
    pub anchors: Vec<(f64, f64)>,
    /// Resolution `σ_E = coeff·sqrt(E)` keV.
    pub sigma_coeff: f64,
    /// Default exposure in seconds.
    pub exposure: f64,
}

impl Default for ResponseDescriptor {
    fn default() -> Self {
        Self {
            anchors: vec![
                (0.3, 50.0),
                (0.8, 1400.0),
                (1.5, 1900.0),
                (3.0, 1100.0),
                (6.0, 600.0),
                (10.0, 300.0),
            ],
            sigma_coeff: 0.05,
            exposure: 100.0,
        }
    }
}

impl ResponseDescriptor {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |m: String| Err(PhysicsError::contract("response", m));
        if self.anchors.len() < 2 {
            return bad("need at least two area anchors".into());
        }
        if self.anchors.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return bad("anchor energies must increase".into());
        }
        if self
            .anchors
            .iter()
            .any(|&(e, a)| !(e > 0.0 && a > 0.0 && e.is_finite() && a.is_finite()))
        {
            return bad("anchor energies and areas must be positive".into());
        }
        if !(self.sigma_coeff > 0.0 && self.sigma_coeff.is_finite()) {
            return bad(format!(
                "resolution coefficient {} must be positive",
                self.sigma_coeff
            ));
        }
        if !(self.exposure > 0.0 && self.exposure.is_finite()) {
            return bad(format!("exposure {} must be positive", self.exposure));
        }
        Ok(())
    }

    /// Area at `e` keV: `ln A` linear in `ln E` between anchors, extended
    /// with the end segments' slopes.
    pub fn effective_area(&self, e: f64) -> f64 {
        let a = &self.anchors;
        let seg = a
            .windows(2)
            .position(|w| e <= w[1].0)
            .unwrap_or(a.len() - 2);
        let ((e0, a0), (e1, a1)) = (a[seg], a[seg + 1]);
        let t = (e.ln() - e0.ln()) / (e1.ln() - e0.ln());
        (a0.ln() + t * (a1.ln() - a0.ln())).exp()
    }
}

/// One input bin's redistribution: weights for output bins
/// `first..first + weights.len()`.
#[derive(Clone, Debug, PartialEq)]
struct Column {
    first: usize,
    weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResponseModel {
    pub grid: EnergyGrid,
    pub descriptor: ResponseDescriptor,
    columns: Vec<Column>,
    areas: Vec<f64>,
    widths: Vec<f64>,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

const BAND_SIGMAS: f64 = 10.0;

impl ResponseModel {
    pub fn new(grid: EnergyGrid, descriptor: ResponseDescriptor) -> Result<Self, PhysicsError> {
        descriptor.validate()?;
        let out_edges = grid.instrument_edges().to_vec();
        let centers = grid.centers();
        let columns = centers
            .iter()
            .map(|&e| {
                let sigma = descriptor.sigma_coeff * e.sqrt();
                let (lo, hi) = (e - BAND_SIGMAS * sigma, e + BAND_SIGMAS * sigma);
                let first = out_edges.partition_point(|&x| x <= lo).saturating_sub(1);
                let mut weights = Vec::new();
                let mut i = first;
                while i + 1 < out_edges.len() && out_edges[i] < hi {
                    let w = normal_cdf((out_edges[i + 1] - e) / sigma)
                        - normal_cdf((out_edges[i] - e) / sigma);
                    weights.push(w.max(0.0));
                    i += 1;
                }
                Column { first, weights }
            })
            .collect();
        let areas = centers
            .iter()
            .map(|&e| descriptor.effective_area(e))
            .collect();
        let widths = grid.widths();
        Ok(Self {
            grid,
            descriptor,
            columns,
            areas,
            widths,
        })
    }

    /// Identity redistribution with unit area; for tests and diagnostics.
    pub fn transparent(grid: EnergyGrid, exposure: f64) -> Result<Self, PhysicsError> {
        let mut r = Self::new(
            grid,
            ResponseDescriptor {
                exposure,
                ..ResponseDescriptor::default()
            },
        )?;
        let n = r.grid.n_bins();
        for (j, c) in r.columns.iter_mut().enumerate() {
            *c = if j < n {
                Column {
                    first: j,
                    weights: vec![1.0],
                }
            } else {
                Column {
                    first: 0,
                    weights: vec![],
                }
            };
        }
        r.areas.iter_mut().for_each(|a| *a = 1.0);
        Ok(r)
    }

    pub fn n_bins(&self) -> usize {
        self.grid.n_bins()
    }

    pub fn exposure(&self) -> f64 {
        self.descriptor.exposure
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Dense `[n_bins, n_extended]` redistribution matrix.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.columns.len()]; self.n_bins()];
        for (j, c) in self.columns.iter().enumerate() {
            for (k, &w) in c.weights.iter().enumerate() {
                m[c.first + k][j] = w;
            }
        }
        m
    }

    /// Expected counts `exposure·Σ_j R_ij·A_j·flux_j·ΔE_j` for a flux density
    /// on the extended grid.
    pub fn fold(&self, flux: &[f64], exposure: f64) -> Result<Vec<f64>, PhysicsError> {
        if flux.len() != self.columns.len() {
            return Err(PhysicsError::contract(
                "response",
                format!(
                    "flux has {} bins, grid has {}",
                    flux.len(),
                    self.columns.len()
                ),
            ));
        }
        if let Some(j) = flux.iter().position(|&f| !(f >= 0.0)) {
            return Err(PhysicsError::contract(
                "response",
                format!("flux in bin {j} is negative or NaN: {}", flux[j]),
            ));
        }
        let mut out = vec![0.0; self.n_bins()];
        for (j, c) in self.columns.iter().enumerate() {
            let s = exposure * self.areas[j] * flux[j] * self.widths[j];
            if s == 0.0 {
                continue;
            }
            for (o, &w) in out[c.first..c.first + c.weights.len()]
                .iter_mut()
                .zip(&c.weights)
            {
                *o += s * w;
            }
        }
        Ok(out)
    }
}

/// [`ResponseModel::fold`] at the model's own exposure.
pub fn apply_response(flux: &[f64], r: &ResponseModel) -> Result<Vec<f64>, PhysicsError> {
    r.fold(flux, r.exposure())
}
