//! Monotonic rational-quadratic spline on `[-B, B]` with identity tails.
//!
//! Raw conditioner outputs per dimension are laid out as `K` unnormalised
//! widths, `K` unnormalised heights and `K - 1` unconstrained interior
//! derivatives. Widths and heights pass through a softmax (with a small
//! minimum bin size) and are scaled to `2B`; derivatives pass through a
//! softplus (with a small minimum). Boundary derivatives are fixed at 1 so
//! the spline joins the linear tails smoothly.

use super::FlowError;

pub const MIN_BIN_WIDTH: f64 = 1e-3;
pub const MIN_BIN_HEIGHT: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplineConfig {
    pub bins: usize,
    pub tail_bound: f64,
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self {
            bins: 8,
            tail_bound: 4.0,
        }
    }
}

impl SplineConfig {
    /// Raw values per transformed dimension: `3K - 1`.
    pub fn n_raw(&self) -> usize {
        3 * self.bins - 1
    }

    /// Raw values that produce uniform bins and unit derivatives.
    pub fn identity_raw(&self) -> Vec<f64> {
        let mut raw = vec![0.0; self.n_raw()];
        let d = inverse_softplus(1.0 - MIN_DERIVATIVE);
        raw[2 * self.bins..].iter_mut().for_each(|v| *v = d);
        raw
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn inverse_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(u: &[f64]) -> Vec<f64> {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Knot positions from bin fractions summing to one: first knot `-B`, last
/// knot pinned to `B`.
fn knots(fractions: &[f64], bound: f64) -> Vec<f64> {
    let k = fractions.len();
    let mut out = Vec::with_capacity(k + 1);
    out.push(-bound);
    let mut cum = 0.0;
    for f in &fractions[..k - 1] {
        cum += f;
        out.push(-bound + 2.0 * bound * cum);
    }
    out.push(bound);
    out
}

/// Validated spline: knot coordinates and knot derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineParams {
    knots_x: Vec<f64>,
    knots_y: Vec<f64>,
    /// `K + 1` derivatives, boundary entries equal to 1.
    derivatives: Vec<f64>,
    tail_bound: f64,
}

impl SplineParams {
    /// Build from positive bin widths and heights (rescaled to sum to `2B`)
    /// and `K - 1` positive interior derivatives.
    pub fn new(
        widths: &[f64],
        heights: &[f64],
        interior_derivatives: &[f64],
        tail_bound: f64,
    ) -> Result<Self, FlowError> {
        let k = widths.len();
        if k < 2 || heights.len() != k || interior_derivatives.len() != k - 1 {
            return Err(FlowError::InvalidSpline(format!(
                "need K ≥ 2 widths/heights and K-1 derivatives, got {}/{}/{}",
                widths.len(),
                heights.len(),
                interior_derivatives.len()
            )));
        }
        if !(tail_bound > 0.0 && tail_bound.is_finite()) {
            return Err(FlowError::InvalidSpline(format!("tail bound {tail_bound}")));
        }
        let positive = |v: &[f64]| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !positive(widths) || !positive(heights) || !positive(interior_derivatives) {
            return Err(FlowError::InvalidSpline(
                "widths, heights and derivatives must be positive".into(),
            ));
        }
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let mut derivatives = Vec::with_capacity(k + 1);
        derivatives.push(1.0);
        derivatives.extend_from_slice(interior_derivatives);
        derivatives.push(1.0);
        Ok(Self {
            knots_x: knots(&norm(widths), tail_bound),
            knots_y: knots(&norm(heights), tail_bound),
            derivatives,
            tail_bound,
        })
    }

    pub fn identity(cfg: SplineConfig) -> Self {
        Self::from_raw(&cfg.identity_raw(), cfg)
    }

    /// Normalise raw conditioner outputs (`3K - 1` values).
    pub fn from_raw(raw: &[f64], cfg: SplineConfig) -> Self {
        RawSpline::new(raw, cfg).params
    }

    pub fn bins(&self) -> usize {
        self.knots_x.len() - 1
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn widths(&self) -> Vec<f64> {
        self.knots_x.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn heights(&self) -> Vec<f64> {
        self.knots_y.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.derivatives
    }

    fn inside(&self, v: f64) -> bool {
        v >= -self.tail_bound && v <= self.tail_bound
    }

    fn locate(knots: &[f64], v: f64) -> usize {
        let k = knots.len() - 1;
        knots[1..k].iter().take_while(|&&kn| kn <= v).count()
    }

    fn bin(&self, k: usize) -> Bin {
        Bin {
            xk: self.knots_x[k],
            wk: self.knots_x[k + 1] - self.knots_x[k],
            yk: self.knots_y[k],
            hk: self.knots_y[k + 1] - self.knots_y[k],
            d0: self.derivatives[k],
            d1: self.derivatives[k + 1],
        }
    }

    /// Position of `y` inside its bin, for the inverse map.
    fn invert_in_bin(&self, y: f64) -> (usize, f64) {
        let k = Self::locate(&self.knots_y, y);
        let b = self.bin(k);
        let s = b.hk / b.wk;
        let dy = y - b.yk;
        let mix = b.d0 + b.d1 - 2.0 * s;
        let a = b.hk * (s - b.d0) + dy * mix;
        let bb = b.hk * b.d0 - dy * mix;
        let c = -s * dy;
        let disc = (bb * bb - 4.0 * a * c).max(0.0);
        let xi = (2.0 * c) / (-bb - disc.sqrt());
        (k, b.xk + xi.clamp(0.0, 1.0) * b.wk)
    }
}

#[derive(Clone, Copy, Debug)]
struct Bin {
    xk: f64,
    wk: f64,
    yk: f64,
    hk: f64,
    d0: f64,
    d1: f64,
}

/// Value, log-slope and their partials with respect to
/// `(x, x_k, w_k, y_k, h_k, d_k, d_{k+1})`.
struct Local {
    y: f64,
    ld: f64,
    dy: [f64; 7],
    dl: [f64; 7],
}

impl Bin {
    fn eval(&self, x: f64) -> Local {
        let Bin {
            xk,
            wk,
            yk,
            hk,
            d0,
            d1,
        } = *self;
        let xi = (x - xk) / wk;
        let s = hk / wk;
        let q = xi * (1.0 - xi);
        let mix = d0 + d1 - 2.0 * s;
        let a = s * xi * xi + d0 * q;
        let den = s + mix * q;
        let y = yk + hk * a / den;
        let om = 1.0 - xi;
        let g = d1 * xi * xi + 2.0 * s * q + d0 * om * om;
        let ld = 2.0 * s.ln() + g.ln() - 2.0 * den.ln();

        let a_xi = 2.0 * s * xi + d0 * (1.0 - 2.0 * xi);
        let a_s = xi * xi;
        let a_d0 = q;
        let den_xi = mix * (1.0 - 2.0 * xi);
        let den_s = 1.0 - 2.0 * q;
        let den2 = den * den;
        let y_xi = hk * (a_xi * den - a * den_xi) / den2;
        let y_s = hk * (a_s * den - a * den_s) / den2;
        let y_d0 = hk * (a_d0 * den - a * q) / den2;
        let y_d1 = -hk * a * q / den2;
        let y_h = a / den;

        let g_xi = 2.0 * d1 * xi + 2.0 * s * (1.0 - 2.0 * xi) - 2.0 * d0 * om;
        let l_xi = g_xi / g - 2.0 * den_xi / den;
        let l_s = 2.0 / s + 2.0 * q / g - 2.0 * den_s / den;
        let l_d0 = om * om / g - 2.0 * q / den;
        let l_d1 = xi * xi / g - 2.0 * q / den;

        let chain = |o_xi: f64, o_s: f64, o_h: f64, o_yk: f64, o_d0: f64, o_d1: f64| {
            [
                o_xi / wk,
                -o_xi / wk,
                -(o_xi * xi + o_s * s) / wk,
                o_yk,
                o_h + o_s / wk,
                o_d0,
                o_d1,
            ]
        };
        Local {
            y,
            ld,
            dy: chain(y_xi, y_s, y_h, 1.0, y_d0, y_d1),
            dl: chain(l_xi, l_s, 0.0, 0.0, l_d0, l_d1),
        }
    }
}

/// Forward map `x -> y` with `ln |dy/dx|`.
pub fn rq_spline_forward(x: f64, p: &SplineParams) -> (f64, f64) {
    if !p.inside(x) {
        return (x, 0.0);
    }
    let k = SplineParams::locate(&p.knots_x, x);
    let l = p.bin(k).eval(x);
    (l.y, l.ld)
}

/// Inverse map `y -> x` with `ln |dx/dy|`.
pub fn rq_spline_inverse(y: f64, p: &SplineParams) -> (f64, f64) {
    if !p.inside(y) {
        return (y, 0.0);
    }
    let (k, x) = p.invert_in_bin(y);
    (x, -p.bin(k).eval(x).ld)
}

/// Spline built from raw outputs, keeping what the chain rule back to the
/// raw values needs.
pub(crate) struct RawSpline {
    params: SplineParams,
    cfg: SplineConfig,
    width_probs: Vec<f64>,
    height_probs: Vec<f64>,
    deriv_slopes: Vec<f64>,
}

/// Output value and log-slope with partials: index 0 is the input, `1..`
/// the raw parameters.
pub(crate) struct RawEval {
    pub value: f64,
    pub logdet: f64,
    pub d_value: Vec<f64>,
    pub d_logdet: Vec<f64>,
}

impl RawSpline {
    pub fn new(raw: &[f64], cfg: SplineConfig) -> Self {
        let k = cfg.bins;
        debug_assert_eq!(raw.len(), cfg.n_raw());
        let width_probs = softmax(&raw[..k]);
        let height_probs = softmax(&raw[k..2 * k]);
        let frac = |p: &[f64], min: f64| -> Vec<f64> {
            p.iter().map(|v| min + (1.0 - min * k as f64) * v).collect()
        };
        let mut derivatives = Vec::with_capacity(k + 1);
        derivatives.push(1.0);
        derivatives.extend(raw[2 * k..].iter().map(|&u| MIN_DERIVATIVE + softplus(u)));
        derivatives.push(1.0);
        let params = SplineParams {
            knots_x: knots(&frac(&width_probs, MIN_BIN_WIDTH), cfg.tail_bound),
            knots_y: knots(&frac(&height_probs, MIN_BIN_HEIGHT), cfg.tail_bound),
            derivatives,
            tail_bound: cfg.tail_bound,
        };
        let deriv_slopes = raw[2 * k..].iter().map(|&u| logistic(u)).collect();
        Self {
            params,
            cfg,
            width_probs,
            height_probs,
            deriv_slopes,
        }
    }

    fn identity_eval(&self, v: f64) -> RawEval {
        let n = 1 + self.cfg.n_raw();
        let mut d_value = vec![0.0; n];
        d_value[0] = 1.0;
        RawEval {
            value: v,
            logdet: 0.0,
            d_value,
            d_logdet: vec![0.0; n],
        }
    }

    /// Map partials over `(x_k, w_k, y_k, h_k, d_k, d_{k+1})` of bin `k` onto
    /// the raw parameters, writing into `out[1..]`.
    fn chain_to_raw(&self, k: usize, local: &[f64; 7], out: &mut [f64]) {
        let kb = self.cfg.bins;
        let bound = self.cfg.tail_bound;
        let scatter = |probs: &[f64], min: f64, g_knot: f64, g_width: f64, dst: &mut [f64]| {
            // Knot k moves with fractions i < k; width k with fraction k
            // directly and the pinned last knot otherwise.
            let mut g_knots = vec![0.0; kb + 1];
            g_knots[k] += g_knot - g_width;
            g_knots[k + 1] += g_width;
            let mut g_frac = vec![0.0; kb];
            let mut tail = 0.0;
            for i in (0..kb).rev() {
                if i + 1 <= kb - 1 {
                    tail += g_knots[i + 1];
                }
                g_frac[i] = 2.0 * bound * tail;
            }
            let scale = 1.0 - min * kb as f64;
            let g_prob: Vec<f64> = g_frac.iter().map(|g| g * scale).collect();
            let dot: f64 = g_prob.iter().zip(probs).map(|(g, p)| g * p).sum();
            for j in 0..kb {
                dst[j] = probs[j] * (g_prob[j] - dot);
            }
        };
        scatter(
            &self.width_probs,
            MIN_BIN_WIDTH,
            local[1],
            local[2],
            &mut out[1..=kb],
        );
        scatter(
            &self.height_probs,
            MIN_BIN_HEIGHT,
            local[3],
            local[4],
            &mut out[1 + kb..=2 * kb],
        );
        let d = &mut out[1 + 2 * kb..];
        d.iter_mut().for_each(|v| *v = 0.0);
        if k >= 1 {
            d[k - 1] = local[5] * self.deriv_slopes[k - 1];
        }
        if k + 1 <= kb - 1 {
            d[k] = local[6] * self.deriv_slopes[k];
        }
    }

    pub fn forward(&self, x: f64) -> RawEval {
        let p = &self.params;
        if !p.inside(x) {
            return self.identity_eval(x);
        }
        let k = SplineParams::locate(&p.knots_x, x);
        self.eval_in_bin(k, x)
    }

    fn eval_in_bin(&self, k: usize, x: f64) -> RawEval {
        let l = self.params.bin(k).eval(x);
        let n = 1 + self.cfg.n_raw();
        let mut d_value = vec![0.0; n];
        let mut d_logdet = vec![0.0; n];
        d_value[0] = l.dy[0];
        d_logdet[0] = l.dl[0];
        self.chain_to_raw(k, &l.dy, &mut d_value);
        self.chain_to_raw(k, &l.dl, &mut d_logdet);
        RawEval {
            value: l.y,
            logdet: l.ld,
            d_value,
            d_logdet,
        }
    }

    /// Inverse with implicit-function partials.
    pub fn inverse(&self, y: f64) -> RawEval {
        let p = &self.params;
        if !p.inside(y) {
            return self.identity_eval(y);
        }
        let (k, x) = p.invert_in_bin(y);
        let fwd = self.eval_in_bin(k, x);
        let slope = fwd.d_value[0];
        let n = fwd.d_value.len();
        let mut d_value = vec![0.0; n];
        let mut d_logdet = vec![0.0; n];
        d_value[0] = 1.0 / slope;
        d_logdet[0] = -fwd.d_logdet[0] * d_value[0];
        for j in 1..n {
            let x_p = -fwd.d_value[j] / slope;
            d_value[j] = x_p;
            d_logdet[j] = -(fwd.d_logdet[j] + fwd.d_logdet[0] * x_p);
        }
        RawEval {
            value: x,
            logdet: -fwd.logdet,
            d_value,
            d_logdet,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raw(rng: &mut ChaCha8Rng, cfg: SplineConfig, scale: f64) -> Vec<f64> {
        (0..cfg.n_raw())
            .map(|_| rng.random_range(-scale..scale))
            .collect()
    }

    #[test]
    fn identity_spline_is_identity() {
        let p = SplineParams::identity(SplineConfig::default());
        for i in 0..=200 {
            let x = -5.0 + 0.05 * i as f64;
            let (y, ld) = rq_spline_forward(x, &p);
            assert!((y - x).abs() < 1e-12, "{x} -> {y}");
            assert!(ld.abs() < 1e-12);
            let (xi, li) = rq_spline_inverse(x, &p);
            assert!((xi - x).abs() < 1e-12);
            assert!(li.abs() < 1e-12);
        }
    }

    #[test]
    fn explicit_uniform_params_identity() {
        let p = SplineParams::new(&[1.0; 4], &[3.0; 4], &[1.0; 3], 2.0).unwrap();
        let (y, ld) = rq_spline_forward(0.3, &p);
        assert!((y - 0.3).abs() < 1e-14 && ld.abs() < 1e-14);
    }

    #[test]
    fn tails_are_identity() {
        let cfg = SplineConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = SplineParams::from_raw(&random_raw(&mut rng, cfg, 2.0), cfg);
        let x = cfg.tail_bound + 1.0;
        assert_eq!(rq_spline_forward(x, &p), (x, 0.0));
        assert_eq!(rq_spline_inverse(-x, &p), (-x, 0.0));
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(SplineParams::new(&[1.0, 0.0], &[1.0, 1.0], &[1.0], 1.0).is_err());
        assert!(SplineParams::new(&[1.0, 1.0], &[1.0, 1.0], &[-1.0], 1.0).is_err());
        assert!(SplineParams::new(&[1.0], &[1.0], &[], 1.0).is_err());
        assert!(SplineParams::new(&[1.0, 1.0], &[1.0, 1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn logdet_matches_finite_difference_slope() {
        let cfg = SplineConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = SplineParams::from_raw(&random_raw(&mut rng, cfg, 3.0), cfg);
            let x = rng.random_range(-3.95..3.95);
            let h = 1e-6;
            let slope =
                (rq_spline_forward(x + h, &p).0 - rq_spline_forward(x - h, &p).0) / (2.0 * h);
            let (_, ld) = rq_spline_forward(x, &p);
            worst = worst.max((ld - slope.ln()).abs());
        }
        assert!(worst < 1e-5, "worst log-slope error {worst}");
    }

    #[test]
    fn raw_partials_match_finite_differences() {
        let cfg = SplineConfig {
            bins: 5,
            tail_bound: 3.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..200 {
            let raw = random_raw(&mut rng, cfg, 1.5);
            let v = rng.random_range(-3.2..3.2);
            let inverse = case % 2 == 1;
            let eval = |v: f64, raw: &[f64]| {
                let s = RawSpline::new(raw, cfg);
                let e = if inverse { s.inverse(v) } else { s.forward(v) };
                (e.value, e.logdet)
            };
            let s = RawSpline::new(&raw, cfg);
            let e = if inverse { s.inverse(v) } else { s.forward(v) };
            let h = 1e-6;
            let (vp, lp) = eval(v + h, &raw);
            let (vm, lm) = eval(v - h, &raw);
            let check = |a: f64, fd: f64, what: &str| {
                let err = (a - fd).abs() / fd.abs().max(1.0);
                assert!(err < 1e-6, "case {case} {what}: analytic {a} vs fd {fd}");
            };
            check(e.d_value[0], (vp - vm) / (2.0 * h), "dvalue/dx");
            check(e.d_logdet[0], (lp - lm) / (2.0 * h), "dlogdet/dx");
            for j in 0..raw.len() {
                let mut rp = raw.clone();
                rp[j] += h;
                let mut rm = raw.clone();
                rm[j] -= h;
                let (vp, lp) = eval(v, &rp);
                let (vm, lm) = eval(v, &rm);
                check(e.d_value[1 + j], (vp - vm) / (2.0 * h), "dvalue/draw");
                check(e.d_logdet[1 + j], (lp - lm) / (2.0 * h), "dlogdet/draw");
            }
        }
    }

    #[test]
    fn round_trip_and_logdet_cancellation() {
        let cfg = SplineConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let p = SplineParams::from_raw(&random_raw(&mut rng, cfg, 3.0), cfg);
            let x = rng.random_range(-40.0..40.0);
            let (y, lf) = rq_spline_forward(x, &p);
            let (xr, li) = rq_spline_inverse(y, &p);
            assert!((xr - x).abs() < 1e-10, "{x} -> {y} -> {xr}");
            assert!((lf + li).abs() < 1e-10);
        }
    }
}
