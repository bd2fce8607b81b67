//! Classical comparison path: the PGStat fit statistic, a Metropolis-Hastings
//! sampler over the physical model and MCMC cost accounting.

mod chain;
mod stat;

pub use chain::{
    autocorr_time, greedy_fit, mcmc_time_estimate, mh_chain, mh_chain_on, spectrum_target,
    write_chain_csv, AutocorrTime, ChainConfig, ChainResult, ChainState, FitResult,
    CHAIN_CSV_HEADER, GREEDY_STEPS, TARGET_ACCEPTANCE,
};
pub use stat::{pgstat, pgstat_bin, profiled_background, reduced_pgstat, PgStat, PgStatInputs};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::physics::PhysicsError;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn contract(msg: impl Into<String>) -> BaselineError {
    BaselineError::Contract(msg.into())
}
