//! Evaluation battery: correlation, ensemble regressions, calibration,
//! reconstruction scoring, timing and report emission.

mod bench;
mod report;
mod svg;

pub use bench::{benchmark, BenchConfig, TimingTable};
pub use report::{emit_coverage, EvalReport, ScatterPoint, SCATTER_DRAWS, SCATTER_SPECTRA};
pub use svg::{coverage_svg, scatter_svg};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baseline::{pgstat, reduced_pgstat, BaselineError, PgStatInputs};
use crate::dataset::{mix, unit_to_params, PriorBox};
use crate::flow::PosteriorDraws;
use crate::physics::{
    expected_counts, poisson_realisation, PhysParams, PhysicsError, ResponseModel, Spectrum,
};

/// Spectra needed before a coverage curve is reported.
pub const MIN_COVERAGE_SPECTRA: usize = 100;
/// Free parameters subtracted from the bin count for reduced statistics.
pub const N_FREE: usize = 5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("{got} draws per spectrum are too few for level {level}; need at least {needed}")]
    TooFewDraws {
        level: f64,
        needed: usize,
        got: usize,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Flow(#[from] crate::flow::FlowError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn contract(msg: impl Into<String>) -> MetricsError {
    MetricsError::Contract(msg.into())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(MetricsError::UndefinedCorrelation(format!(
            "lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(MetricsError::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinFitSummary {
    pub slope_mean: f64,
    pub slope_std: f64,
    pub intercept_mean: f64,
    pub intercept_std: f64,
}

/// Ordinary least squares `y = a·x + b`.
pub fn linfit(x: &[f64], y: &[f64]) -> Result<(f64, f64), MetricsError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(contract(format!(
            "linear fit on lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(contract("linear fit on constant targets"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    (
        m,
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt(),
    )
}

/// One OLS fit per draw set against the targets; mean and sample standard
/// deviation of slopes and intercepts across sets.
pub fn ensemble_linfit(
    targets: &[f64],
    draw_sets: &[Vec<f64>],
) -> Result<LinFitSummary, MetricsError> {
    if draw_sets.is_empty() {
        return Err(contract("no draw sets"));
    }
    let mut slopes = Vec::with_capacity(draw_sets.len());
    let mut intercepts = Vec::with_capacity(draw_sets.len());
    for set in draw_sets {
        let (a, b) = linfit(targets, set)?;
        slopes.push(a);
        intercepts.push(b);
    }
    let (slope_mean, slope_std) = mean_std(&slopes);
    let (intercept_mean, intercept_std) = mean_std(&intercepts);
    Ok(LinFitSummary {
        slope_mean,
        slope_std,
        intercept_mean,
        intercept_std,
    })
}

/// Linear-interpolated sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Smallest draw count whose tails at level `γ` hold at least one draw.
pub fn min_draws_for(level: f64) -> usize {
    (2.0 / (1.0 - level) - 1e-9).ceil() as usize
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoverageTable {
    pub levels: Vec<f64>,
    /// Coverage averaged over parameters, one per level.
    pub coverage: Vec<f64>,
    /// `[level][parameter]` counts of truths inside the central interval.
    pub inside: Vec<Vec<usize>>,
    pub n_spectra: usize,
}

impl CoverageTable {
    pub fn per_parameter(&self, level: usize, param: usize) -> f64 {
        self.inside[level][param] as f64 / self.n_spectra as f64
    }
}

/// Nine levels 0.1, 0.2, ..., 0.9.
pub fn default_levels() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Fraction of `(spectrum, parameter)` truths inside the central credible
/// interval at each level, averaged over parameters.
pub fn coverage_curve(
    draws: &[PosteriorDraws],
    truths: &[Vec<f64>],
    levels: &[f64],
) -> Result<CoverageTable, MetricsError> {
    if draws.len() != truths.len() {
        return Err(contract(format!(
            "{} posteriors for {} truths",
            draws.len(),
            truths.len()
        )));
    }
    if draws.len() < MIN_COVERAGE_SPECTRA {
        return Err(contract(format!(
            "{} spectra; coverage needs at least {MIN_COVERAGE_SPECTRA}",
            draws.len()
        )));
    }
    let dim = draws[0].dim;
    let n_min = draws.iter().map(PosteriorDraws::len).min().unwrap_or(0);
    for &level in levels {
        if !(level > 0.0 && level < 1.0) {
            return Err(contract(format!("credible level {level} outside (0, 1)")));
        }
        let needed = min_draws_for(level);
        if n_min < needed {
            return Err(MetricsError::TooFewDraws {
                level,
                needed,
                got: n_min,
            });
        }
    }
    let mut inside = vec![vec![0usize; dim]; levels.len()];
    for (d, t) in draws.iter().zip(truths) {
        if d.dim != dim || t.len() != dim {
            return Err(contract("mixed posterior dimensions"));
        }
        for j in 0..dim {
            let mut col = d.coordinate(j);
            col.sort_by(f64::total_cmp);
            for (li, &level) in levels.iter().enumerate() {
                let lo = quantile_sorted(&col, 0.5 * (1.0 - level));
                let hi = quantile_sorted(&col, 0.5 * (1.0 + level));
                if lo <= t[j] && t[j] <= hi {
                    inside[li][j] += 1;
                }
            }
        }
    }
    let n = draws.len();
    let coverage = inside
        .iter()
        .map(|row| row.iter().sum::<usize>() as f64 / (n * dim) as f64)
        .collect();
    Ok(CoverageTable {
        levels: levels.to_vec(),
        coverage,
        inside,
        n_spectra: n,
    })
}

/// Holds one random draw out of each posterior as a pseudo-truth. Coverage
/// of the remaining draws against these truths is calibrated by
/// construction.
pub fn self_consistency_split(
    draws: &[PosteriorDraws],
    seed: u64,
) -> (Vec<PosteriorDraws>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rest = Vec::with_capacity(draws.len());
    let mut truths = Vec::with_capacity(draws.len());
    for d in draws {
        let k = rng.random_range(0..d.len());
        truths.push(d.draw(k).to_vec());
        let mut r = d.clone();
        r.samples.drain(k * d.dim..(k + 1) * d.dim);
        r.log_q.remove(k);
        rest.push(r);
    }
    (rest, truths)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSummary {
    pub reduced: Vec<f64>,
    pub median: f64,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Reduced PGStat of each observed spectrum against the noiseless model at
/// the given physical parameters, and the median over spectra.
pub fn reconstruct_and_score(
    params: &[[f64; 5]],
    spectra: &[Spectrum],
    response: &ResponseModel,
    workers: usize,
) -> Result<ScoreSummary, MetricsError> {
    if params.len() != spectra.len() || params.is_empty() {
        return Err(contract(format!(
            "{} parameter vectors for {} spectra",
            params.len(),
            spectra.len()
        )));
    }
    let n_bins = response.n_bins();
    let zeros = vec![0.0; n_bins];
    let reduced =
        crate::parallel::par_map(params.len(), workers, |i| -> Result<f64, MetricsError> {
            let s = &spectra[i];
            let m = expected_counts(&PhysParams::from_slice(&params[i]), response, s.exposure)?;
            let stat = pgstat(&PgStatInputs::without_background(&s.counts, &m, &zeros))?;
            Ok(reduced_pgstat(stat.value, n_bins, N_FREE)?)
        })?;
    let median = median(&reduced);
    Ok(ScoreSummary { reduced, median })
}

/// Posterior means in physical units, clamped into the prior box.
pub fn posterior_means_physical(draws: &[PosteriorDraws], prior: &PriorBox) -> Vec<[f64; 5]> {
    draws
        .iter()
        .map(|d| {
            let u: [f64; 5] = std::array::from_fn(|j| mean(&d.coordinate(j)).clamp(-1.0, 1.0));
            unit_to_params(&u, prior)
        })
        .collect()
}

/// One Poisson realisation of each spectrum's counts, spectrum `i` seeded
/// with `mix(seed, i)`. Noiseless truths score exactly zero, so scoring
/// against these gives the statistic its usual scale.
pub fn poisson_observations(spectra: &[Spectrum], seed: u64) -> Vec<Spectrum> {
    spectra
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let counts = poisson_realisation(&s.counts, mix(seed, i as u64));
            let uncertainty = counts.iter().map(|c| c.sqrt().max(1.0)).collect();
            Spectrum {
                counts,
                uncertainty,
                exposure: s.exposure,
                noisy: true,
            }
        })
        .collect()
}
