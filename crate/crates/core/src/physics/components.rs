//! Additive and multiplicative spectral components on the extended grid.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

use super::PhysicsError;

pub const DISK_X_MIN: f64 = 0.05;
pub const ABSORPTION_SIGMA1: f64 = 0.23;
const GL_POINTS: usize = 64;
const EXP_GUARD: f64 = 700.0;

/// Nodes `x_k` and weights (including the `dx = x d ln x` Jacobian) of the
/// ln-x Gauss–Legendre rule on `[x_min, 1]`, plus the normalisation `C`.
struct DiskRule {
    x: Vec<f64>,
    w: Vec<f64>,
    norm: f64,
}

fn disk_integral(rule_x: &[f64], rule_w: &[f64], e: f64, kt: f64) -> f64 {
    let mut acc = 0.0;
    for (&x, &w) in rule_x.iter().zip(rule_w) {
        let a = e / (kt * x);
        if a > EXP_GUARD {
            continue;
        }
        acc += w * x.powf(-11.0 / 3.0) * e * e / a.exp_m1();
    }
    acc
}

fn disk_rule() -> &'static DiskRule {
    static RULE: OnceLock<DiskRule> = OnceLock::new();
    RULE.get_or_init(|| {
        let gl = GaussLegendre::new(NonZeroUsize::new(GL_POINTS).expect("non-zero"));
        let (a, b) = (DISK_X_MIN.ln(), 0.0);
        let half = 0.5 * (b - a);
        let mut x = Vec::with_capacity(GL_POINTS);
        let mut w = Vec::with_capacity(GL_POINTS);
        for &(t, wt) in gl.as_node_weight_pairs() {
            let xi = (half * t + 0.5 * (a + b)).exp();
            x.push(xi);
            w.push(wt * half * xi);
        }
        let norm = 1.0 / disk_integral(&x, &w, 1.0, 1.0);
        DiskRule { x, w, norm }
    })
}

/// Multicolour disk photon flux density at `e` keV.
pub fn diskbb_flux(e: f64, kt: f64, norm: f64) -> f64 {
    let r = disk_rule();
    norm * r.norm * disk_integral(&r.x, &r.w, e, kt)
}

/// Normalisation constant `C` of [`diskbb_flux`], for oracles.
pub fn diskbb_shape_constant() -> f64 {
    disk_rule().norm
}

/// Photon-conserving power-law up-scattering of a fraction `fsc` of the
/// seed photons. `seed` is a flux density per bin of `edges`.
///
/// Photons from bin `k` are redistributed with density
/// `(Γ-1)·E_k^(Γ-1)·E^(-Γ)` for `E ≥ E_k` (`E_k` the geometric centre),
/// renormalised over the grid so none escape past the last edge.
pub fn simpl_comptonize(
    seed: &[f64],
    edges: &[f64],
    gamma: f64,
    fsc: f64,
) -> Result<Vec<f64>, PhysicsError> {
    if !(gamma > 1.0) {
        return Err(PhysicsError::contract(
            "simpl",
            format!("photon index must exceed 1, got {gamma}"),
        ));
    }
    if !(0.0..=1.0).contains(&fsc) {
        return Err(PhysicsError::contract(
            "simpl",
            format!("scattered fraction {fsc} outside [0, 1]"),
        ));
    }
    let n = seed.len();
    if edges.len() != n + 1 {
        return Err(PhysicsError::contract(
            "simpl",
            format!("{n} bins need {} edges", n + 1),
        ));
    }
    if fsc == 0.0 {
        return Ok(seed.to_vec());
    }
    let a = gamma - 1.0;
    let e_max = edges[n];
    let mut out = Vec::with_capacity(n);
    // Carried photons from lower bins, each scaled by c_k·E_k^(Γ-1).
    let mut carried = 0.0;
    for j in 0..n {
        let (lo, hi) = (edges[j], edges[j + 1]);
        let width = hi - lo;
        let ek = (lo * hi).sqrt();
        let photons = seed[j] * width;
        let c = 1.0 / (1.0 - (ek / e_max).powf(a));
        let own = photons * c * (1.0 - (ek / hi).powf(a));
        let from_below = carried * (lo.powf(-a) - hi.powf(-a));
        out.push((1.0 - fsc) * seed[j] + fsc * (own + from_below) / width);
        carried += photons * c * ek.powf(a);
    }
    Ok(out)
}

/// Photoelectric transmission `exp(-N_H·0.23·E^(-8/3))`.
pub fn transmission(e: f64, nh: f64) -> f64 {
    (-nh * ABSORPTION_SIGMA1 * e.powf(-8.0 / 3.0)).exp()
}

/// Multiply `flux` (on bin centres `energies`) by the transmission.
pub fn absorb(flux: &[f64], energies: &[f64], nh: f64) -> Result<Vec<f64>, PhysicsError> {
    if nh < 0.0 || !nh.is_finite() {
        return Err(PhysicsError::contract(
            "absorb",
            format!("column density {nh} must be finite and >= 0"),
        ));
    }
    Ok(flux
        .iter()
        .zip(energies)
        .map(|(&f, &e)| f * transmission(e, nh))
        .collect())
}
