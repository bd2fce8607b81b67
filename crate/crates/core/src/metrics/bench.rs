use std::time::Instant;

use super::{contract, MetricsError};
use crate::autodiff::ParamStore;
use crate::baseline::{
    autocorr_time, greedy_fit, mcmc_time_estimate, mh_chain, spectrum_target, ChainConfig,
    GREEDY_STEPS,
};
use crate::dataset::{mix, PriorBox};
use crate::physics::{ResponseModel, Spectrum};
use crate::training::NetworkAssembly;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Draws for the full-posterior flow timing.
    pub flow_draws: usize,
    /// Effective samples the MCMC estimate is asked for.
    pub effective_samples: usize,
    /// Measured chain: post-burn-in steps and burn-in.
    pub chain_steps: usize,
    pub burn_in: usize,
    pub greedy_steps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            flow_draws: 1000,
            effective_samples: 1000,
            chain_steps: 20_000,
            burn_in: 5_000,
            greedy_steps: GREEDY_STEPS,
            seed: 0,
        }
    }
}

/// Measured constants and derived speedups. Times are seconds per spectrum
/// unless named total.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingTable {
    pub n_spectra: usize,
    pub flow_single: f64,
    pub flow_full: f64,
    pub flow_draws: usize,
    /// Encoder rows per spectrum during the full-posterior pass.
    pub encoder_rows_per_spectrum: f64,
    pub greedy_fit: f64,
    pub chain_seconds: f64,
    pub chain_steps: usize,
    pub burn_in: usize,
    pub tau: f64,
    pub mcmc_per_spectrum: f64,
    pub mcmc_total: f64,
    pub single_speedup: f64,
    pub full_speedup: f64,
}

impl TimingTable {
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("n_spectra", self.n_spectra as f64),
            ("flow_single_seconds", self.flow_single),
            ("flow_full_seconds", self.flow_full),
            ("flow_draws", self.flow_draws as f64),
            ("encoder_rows_per_spectrum", self.encoder_rows_per_spectrum),
            ("greedy_fit_seconds", self.greedy_fit),
            ("chain_seconds", self.chain_seconds),
            ("chain_steps", self.chain_steps as f64),
            ("burn_in", self.burn_in as f64),
            ("tau", self.tau),
            ("mcmc_per_spectrum_seconds", self.mcmc_per_spectrum),
            ("mcmc_total_seconds", self.mcmc_total),
            ("single_speedup", self.single_speedup),
            ("full_speedup", self.full_speedup),
        ]
    }
}

/// Times flow posteriors (1 and `flow_draws` draws, one encoder pass each),
/// a greedy fit per spectrum and one measured MCMC chain on the first
/// spectrum, then extrapolates the chain cost to `effective_samples`.
#[allow(clippy::too_many_arguments)]
pub fn benchmark(
    nets: &NetworkAssembly,
    store: &ParamStore,
    inputs: &[f64],
    spectra: &[Spectrum],
    units: &[[f64; 5]],
    response: &ResponseModel,
    prior: &PriorBox,
    cfg: &BenchConfig,
) -> Result<TimingTable, MetricsError> {
    let nb = nets.config.n_bins;
    let n = spectra.len();
    if n == 0 || inputs.len() != n * nb || units.len() != n {
        return Err(contract(format!(
            "{n} spectra with {} input values and {} start points",
            inputs.len(),
            units.len()
        )));
    }
    let row = |i: usize| &inputs[i * nb..(i + 1) * nb];
    let flow = nets.flow.prepare(store)?;
    nets.posterior_with(&flow, store, row(0), cfg.flow_draws, cfg.seed)?;

    let t0 = Instant::now();
    for i in 0..n {
        nets.posterior_with(&flow, store, row(i), 1, mix(cfg.seed, i as u64))?;
    }
    let flow_single = t0.elapsed().as_secs_f64() / n as f64;

    let rows_before = nets.encoded_rows();
    let t0 = Instant::now();
    for i in 0..n {
        nets.posterior_with(
            &flow,
            store,
            row(i),
            cfg.flow_draws,
            mix(cfg.seed, i as u64),
        )?;
    }
    let flow_full = t0.elapsed().as_secs_f64() / n as f64;
    let encoder_rows_per_spectrum = (nets.encoded_rows() - rows_before) as f64 / n as f64;

    let start = [0.0; 5];
    let t0 = Instant::now();
    for (i, s) in spectra.iter().enumerate() {
        greedy_fit(
            spectrum_target(s, response, prior),
            &start,
            cfg.greedy_steps,
            0.1,
            mix(cfg.seed, i as u64),
        )?;
    }
    let greedy_fit_time = t0.elapsed().as_secs_f64() / n as f64;

    let chain_cfg = ChainConfig::new(5, cfg.burn_in + cfg.chain_steps, cfg.burn_in, cfg.seed);
    let t0 = Instant::now();
    let chain = mh_chain(&spectra[0], response, prior, &units[0], &chain_cfg)?;
    let chain_seconds = t0.elapsed().as_secs_f64();
    let tau = autocorr_time(&chain.samples, chain.dim)?.max;
    let est = |n_val: usize| {
        mcmc_time_estimate(
            cfg.effective_samples as f64,
            tau,
            cfg.burn_in as f64,
            chain_seconds,
            cfg.chain_steps as f64,
            n_val as f64,
        )
    };
    let mcmc_per_spectrum = est(1)?;
    let mcmc_total = est(n)?;
    Ok(TimingTable {
        n_spectra: n,
        flow_single,
        flow_full,
        flow_draws: cfg.flow_draws,
        encoder_rows_per_spectrum,
        greedy_fit: greedy_fit_time,
        chain_seconds,
        chain_steps: cfg.chain_steps,
        burn_in: cfg.burn_in,
        tau,
        mcmc_per_spectrum,
        mcmc_total,
        single_speedup: greedy_fit_time / flow_single,
        full_speedup: mcmc_per_spectrum / flow_full,
    })
}
