//! Reconstruction, latent and flow loss terms.

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::flow::PosteriorDraws;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn check_sigma(sigma: &[f64]) -> Result<(), AutodiffError> {
    match sigma.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        Some(i) => Err(AutodiffError::Contract(format!(
            "uncertainty {} at index {i} must be positive",
            sigma[i]
        ))),
        None => Ok(()),
    }
}

/// Mean over elements of `0.5·[ln(2πσ²) + (recon - target)²/σ²]` with fixed
/// data-side `σ`.
pub fn gaussian_nll(
    tape: &mut Tape,
    recon: Var,
    target: &Tensor,
    sigma: &Tensor,
) -> Result<Var, AutodiffError> {
    check_sigma(sigma.data())?;
    if target.shape() != tape.shape(recon) || sigma.shape() != target.shape() {
        return Err(AutodiffError::Shape(format!(
            "gaussian_nll: recon {:?}, target {:?}, sigma {:?}",
            tape.shape(recon),
            target.shape(),
            sigma.shape()
        )));
    }
    let inv: Vec<f64> = sigma.data().iter().map(|s| 1.0 / s).collect();
    let offset = sigma
        .data()
        .iter()
        .map(|s| 0.5 * (LN_2PI + 2.0 * s.ln()))
        .sum::<f64>()
        / sigma.len() as f64;
    let t = tape.constant(target.clone());
    let iv = tape.constant(Tensor::new(target.shape(), inv)?);
    let r = tape.sub(recon, t)?;
    let z = tape.mul(r, iv)?;
    let z2 = tape.square(z);
    let m = tape.mean(z2);
    let h = tape.scale(m, 0.5);
    Ok(tape.add_scalar(h, offset))
}

pub fn gaussian_nll_value(
    recon: &[f64],
    target: &[f64],
    sigma: &[f64],
) -> Result<f64, AutodiffError> {
    check_sigma(sigma)?;
    if recon.len() != target.len() || sigma.len() != target.len() || target.is_empty() {
        return Err(AutodiffError::Shape("gaussian_nll: length mismatch".into()));
    }
    let s: f64 = recon
        .iter()
        .zip(target)
        .zip(sigma)
        .map(|((r, t), s)| 0.5 * (LN_2PI + 2.0 * s.ln() + ((r - t) / s).powi(2)))
        .sum();
    Ok(s / target.len() as f64)
}

/// Mean squared difference between draws `[B, D]` and targets `[B, D]`.
pub fn latent_mse(tape: &mut Tape, draws: Var, target: &Tensor) -> Result<Var, AutodiffError> {
    let t = tape.constant(target.clone());
    let d = tape.sub(draws, t)?;
    let d2 = tape.square(d);
    Ok(tape.mean(d2))
}

pub fn latent_mse_value(draws: &PosteriorDraws, target: &[f64]) -> f64 {
    let n = draws.samples.len().max(1);
    draws
        .samples
        .chunks(draws.dim)
        .flat_map(|d| d.iter().zip(target).map(|(a, b)| (a - b).powi(2)))
        .sum::<f64>()
        / n as f64
}

/// Mean of `-log q` over rows.
pub fn flow_nll(tape: &mut Tape, log_q: Var) -> Var {
    let m = tape.mean(log_q);
    tape.scale(m, -1.0)
}
