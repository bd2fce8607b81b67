//! Logarithmic energy grids.

use super::PhysicsError;

pub const BAND_LO: f64 = 0.3;
pub const BAND_HI: f64 = 10.0;
pub const EXTENDED_HI: f64 = 100.0;

/// Instrument bins on `[0.3, 10]` keV followed by a coarser log-spaced tail
/// up to 100 keV. The tail holds `round(5·n/12)` bins (100 for 240).
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyGrid {
    n_bins: usize,
    edges: Vec<f64>,
}

fn log_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let mut e: Vec<f64> = (0..=n)
        .map(|i| (a + (b - a) * i as f64 / n as f64).exp())
        .collect();
    e[0] = lo;
    e[n] = hi;
    e
}

impl EnergyGrid {
    pub fn new(n_bins: usize) -> Result<Self, PhysicsError> {
        if n_bins < 2 {
            return Err(PhysicsError::contract(
                "grid",
                format!("need at least 2 bins, got {n_bins}"),
            ));
        }
        let tail = ((5 * n_bins) as f64 / 12.0).round().max(1.0) as usize;
        let mut edges = log_edges(BAND_LO, BAND_HI, n_bins);
        edges.extend(log_edges(BAND_HI, EXTENDED_HI, tail).into_iter().skip(1));
        Ok(Self { n_bins, edges })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_extended(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn extended_edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn instrument_edges(&self) -> &[f64] {
        &self.edges[..=self.n_bins]
    }

    /// Geometric bin centres of the extended grid.
    pub fn centers(&self) -> Vec<f64> {
        self.edges
            .windows(2)
            .map(|w| (w[0] * w[1]).sqrt())
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn instrument_centers(&self) -> Vec<f64> {
        let mut c = self.centers();
        c.truncate(self.n_bins);
        c
    }
}
