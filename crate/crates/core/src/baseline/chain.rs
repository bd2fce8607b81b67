use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::stat::{pgstat, PgStatInputs};
use super::{contract, BaselineError};
use crate::dataset::{unit_to_params, PriorBox};
use crate::physics::{expected_counts, PhysParams, ResponseModel, Spectrum, PARAM_NAMES};

pub const TARGET_ACCEPTANCE: f64 = 0.234;
/// Sampler steps standing in for one iterative fit.
pub const GREEDY_STEPS: usize = 130;
pub const CHAIN_CSV_HEADER: &str = "step,kT,N,gamma,fsc,nH,pgstat,accepted";

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    /// Total steps including burn-in.
    pub steps: usize,
    pub burn_in: usize,
    /// Initial per-coordinate proposal standard deviation.
    pub initial_scale: Vec<f64>,
    pub seed: u64,
}

impl ChainConfig {
    pub fn new(dim: usize, steps: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            steps,
            burn_in,
            initial_scale: vec![0.05; dim],
            seed,
        }
    }
}

/// Sampler state; `stat` is `-2 ln target` at `position`.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub stat: f64,
    pub scale: Vec<f64>,
    pub accepted: u64,
    pub steps: u64,
    rng: ChaCha8Rng,
}

impl ChainState {
    fn propose(&mut self) -> Vec<f64> {
        self.position
            .iter()
            .zip(&self.scale)
            .map(|(x, s)| x + s * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// One Metropolis step; proposals outside `[-1, 1]^d` are rejected.
    fn step(&mut self, target: &mut impl FnMut(&[f64]) -> f64) -> bool {
        let cand = self.propose();
        self.steps += 1;
        let u: f64 = self.rng.random();
        if cand.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return false;
        }
        let stat = target(&cand);
        if !stat.is_finite() {
            return false;
        }
        let ok = u.ln() < -0.5 * (stat - self.stat);
        if ok {
            self.position = cand;
            self.stat = stat;
            self.accepted += 1;
        }
        ok
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainResult {
    pub dim: usize,
    pub burn_in: usize,
    /// Post-burn-in positions, row-major `[steps - burn_in, dim]`.
    pub samples: Vec<f64>,
    pub stats: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Post-burn-in acceptance rate.
    pub acceptance_rate: f64,
    /// Proposal scale after adaptation.
    pub scale: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ChainResult {
    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }
}

/// Metropolis-Hastings on `exp(-stat/2)` with a flat prior on `[-1, 1]^d`.
/// During burn-in the proposal scale is multiplied by a Robbins-Monro factor
/// steering acceptance toward 23.4%; it is frozen afterwards.
pub fn mh_chain_on(
    mut target: impl FnMut(&[f64]) -> f64,
    init: &[f64],
    cfg: &ChainConfig,
) -> Result<ChainResult, BaselineError> {
    let dim = init.len();
    if cfg.steps <= cfg.burn_in {
        return Err(contract(format!(
            "chain of {} steps cannot discard {} burn-in steps",
            cfg.steps, cfg.burn_in
        )));
    }
    if cfg.initial_scale.len() != dim
        || cfg
            .initial_scale
            .iter()
            .any(|s| !(*s >= 0.0) || !s.is_finite())
    {
        return Err(contract(format!(
            "proposal scale {:?} for {dim} coordinates",
            cfg.initial_scale
        )));
    }
    if let Some(i) = init.iter().position(|x| !(-1.0..=1.0).contains(x)) {
        return Err(contract(format!(
            "initial coordinate {i} = {} outside [-1, 1]",
            init[i]
        )));
    }
    let stat = target(init);
    if !stat.is_finite() {
        return Err(contract(format!("statistic {stat} at the initial point")));
    }
    let mut warnings = Vec::new();
    if cfg.initial_scale.iter().all(|s| *s == 0.0) {
        warnings.push("proposal scale is zero; the chain cannot move".to_string());
    }
    let mut st = ChainState {
        position: init.to_vec(),
        stat,
        scale: cfg.initial_scale.clone(),
        accepted: 0,
        steps: 0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut log_factor = 0.0f64;
    for k in 0..cfg.burn_in {
        let ok = st.step(&mut target);
        log_factor += ((ok as u8 as f64) - TARGET_ACCEPTANCE) / ((k + 1) as f64).powf(0.6);
        log_factor = log_factor.clamp(-30.0, 30.0);
        let f = log_factor.exp();
        st.scale
            .iter_mut()
            .zip(&cfg.initial_scale)
            .for_each(|(s, s0)| *s = s0 * f);
    }
    let n = cfg.steps - cfg.burn_in;
    let mut samples = Vec::with_capacity(n * dim);
    let mut stats = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    for _ in 0..n {
        accepted.push(st.step(&mut target));
        samples.extend_from_slice(&st.position);
        stats.push(st.stat);
    }
    let acceptance_rate = accepted.iter().filter(|a| **a).count() as f64 / n as f64;
    if n > 1 && samples.chunks(dim).all(|r| r == &samples[..dim]) {
        warnings.push("chain never moved after burn-in".to_string());
    }
    Ok(ChainResult {
        dim,
        burn_in: cfg.burn_in,
        samples,
        stats,
        accepted,
        acceptance_rate,
        scale: st.scale,
        warnings,
    })
}

/// PGStat of a spectrum against the folded model at unit-coordinate
/// parameters. The synthetic data carry no background, so every bin takes
/// the Cash limit.
pub fn spectrum_target<'a>(
    spec: &'a Spectrum,
    response: &'a ResponseModel,
    prior: &'a PriorBox,
) -> impl FnMut(&[f64]) -> f64 + 'a {
    let zeros = vec![0.0; spec.counts.len()];
    move |u: &[f64]| {
        let Ok(u) = <[f64; 5]>::try_from(u) else {
            return f64::NAN;
        };
        let p = PhysParams::from_slice(&unit_to_params(&u, prior));
        match expected_counts(&p, response, spec.exposure) {
            Ok(m) => pgstat(&PgStatInputs::without_background(&spec.counts, &m, &zeros))
                .map_or(f64::NAN, |s| s.value),
            Err(_) => f64::NAN,
        }
    }
}

pub fn mh_chain(
    spec: &Spectrum,
    response: &ResponseModel,
    prior: &PriorBox,
    init: &[f64; 5],
    cfg: &ChainConfig,
) -> Result<ChainResult, BaselineError> {
    if spec.counts.len() != response.n_bins() {
        return Err(contract(format!(
            "spectrum has {} bins, response {}",
            spec.counts.len(),
            response.n_bins()
        )));
    }
    mh_chain_on(spectrum_target(spec, response, prior), init, cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub position: Vec<f64>,
    pub stat: f64,
    pub evaluations: usize,
}

/// Sampler steps that accept only improvements, standing in for an iterative
/// fitter.
pub fn greedy_fit(
    mut target: impl FnMut(&[f64]) -> f64,
    init: &[f64],
    steps: usize,
    scale: f64,
    seed: u64,
) -> Result<FitResult, BaselineError> {
    if let Some(i) = init.iter().position(|x| !(-1.0..=1.0).contains(x)) {
        return Err(contract(format!(
            "initial coordinate {i} = {} outside [-1, 1]",
            init[i]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = init.to_vec();
    let mut stat = target(init);
    let mut evaluations = 1;
    for _ in 0..steps {
        let cand: Vec<f64> = best
            .iter()
            .map(|x| (x + scale * rng.sample::<f64, _>(StandardNormal)).clamp(-1.0, 1.0))
            .collect();
        let s = target(&cand);
        evaluations += 1;
        if s < stat || !stat.is_finite() && s.is_finite() {
            best = cand;
            stat = s;
        }
    }
    Ok(FitResult {
        position: best,
        stat,
        evaluations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutocorrTime {
    pub per_coordinate: Vec<f64>,
    pub max: f64,
    /// Coordinates whose chain is constant; their `τ` is the chain length.
    pub degenerate: Vec<bool>,
}

/// Integrated autocorrelation time of one series by the initial positive
/// sequence: `τ = -1 + 2 Σ_k (ρ_2k + ρ_2k+1)`, summed while the pair sums stay
/// positive. Returns `None` for a constant series.
fn iat(x: &[f64]) -> Option<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let acov = |lag: usize| {
        d[..n - lag]
            .iter()
            .zip(&d[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let c0 = acov(0);
    if !(c0 > 0.0) {
        return None;
    }
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (acov(2 * k) + acov(2 * k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    Some(tau.max(1.0))
}

/// `τ` per coordinate of a row-major chain `[n, dim]`.
pub fn autocorr_time(samples: &[f64], dim: usize) -> Result<AutocorrTime, BaselineError> {
    if dim == 0 || samples.len() % dim != 0 {
        return Err(contract(format!(
            "{} values do not form rows of {dim}",
            samples.len()
        )));
    }
    let n = samples.len() / dim;
    if n < 100 {
        return Err(contract(format!(
            "chain of {n} samples is shorter than 100"
        )));
    }
    let mut per_coordinate = Vec::with_capacity(dim);
    let mut degenerate = Vec::with_capacity(dim);
    for j in 0..dim {
        let col: Vec<f64> = samples.iter().skip(j).step_by(dim).copied().collect();
        match iat(&col) {
            Some(t) => {
                per_coordinate.push(t);
                degenerate.push(false);
            }
            None => {
                per_coordinate.push(n as f64);
                degenerate.push(true);
            }
        }
    }
    let max = per_coordinate.iter().copied().fold(1.0, f64::max);
    Ok(AutocorrTime {
        per_coordinate,
        max,
        degenerate,
    })
}

/// Wall time for `n_samples` effective samples on `n_val` spectra, given a
/// measured time `t` for `l` steps plus `b` burn-in steps:
/// `((n_samples·τ + b)·t)/(l + b)·n_val`.
pub fn mcmc_time_estimate(
    n_samples: f64,
    tau: f64,
    b: f64,
    t: f64,
    l: f64,
    n_val: f64,
) -> Result<f64, BaselineError> {
    let args = [n_samples, tau, t, l, n_val];
    if args.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || !(b >= 0.0) || !b.is_finite() {
        return Err(contract(format!(
            "time estimate needs positive inputs: N={n_samples}, tau={tau}, b={b}, t={t}, L={l}, N_val={n_val}"
        )));
    }
    Ok((n_samples * tau + b) * t / (l + b) * n_val)
}

/// Post-burn-in steps in physical units.
pub fn write_chain_csv(
    out: impl Write,
    chain: &ChainResult,
    prior: &PriorBox,
) -> Result<(), BaselineError> {
    if chain.dim != PARAM_NAMES.len() {
        return Err(contract(format!(
            "chain dimension {} is not {}",
            chain.dim,
            PARAM_NAMES.len()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CHAIN_CSV_HEADER.split(','))?;
    for i in 0..chain.len() {
        let u: [f64; 5] = chain.sample(i).try_into().expect("dimension checked");
        let p = unit_to_params(&u, prior);
        let mut rec = vec![(chain.burn_in + i).to_string()];
        rec.extend(p.iter().map(|v| v.to_string()));
        rec.push(chain.stats[i].to_string());
        rec.push((chain.accepted[i] as u8).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
