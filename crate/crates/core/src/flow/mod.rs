//! Conditional normalizing flow built from autoregressive rational-quadratic
//! spline transforms.
//!
//! Direction convention: each transform maps the parameter side towards the
//! base noise (`θ -> z`) in a single conditioner pass, so log-densities are
//! cheap. Sampling runs the inverse, one conditioner pass per dimension.

mod fast;
pub mod made;
pub mod spline;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamStore, Tape, Tensor, Var};
pub use fast::PreparedFlow;
pub use made::{BoundMade, MadeConditioner};
use spline::RawSpline;
pub use spline::{rq_spline_forward, rq_spline_inverse, SplineConfig, SplineParams};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("invalid spline parameters: {0}")]
    InvalidSpline(String),
    #[error("non-finite value after transform {transform}")]
    NonFinite { transform: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least one draw")]
    NoDraws,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    pub dim: usize,
    pub context: usize,
    pub hidden: usize,
    pub transforms: usize,
    pub spline: SplineConfig,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            context: 64,
            hidden: 128,
            transforms: 10,
            spline: SplineConfig::default(),
        }
    }
}

/// Layer stack description; weights live in a [`ParamStore`] under
/// `flow.t{i}.…`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    pub config: FlowConfig,
    pub layers: Vec<FlowLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowLayer {
    pub conditioner: MadeConditioner,
    /// Applied to the layer input before the spline: `u[:, j] = h[:, perm[j]]`.
    pub permutation: Vec<usize>,
    inverse_permutation: Vec<usize>,
}

/// Draws from the posterior of one context.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub dim: usize,
    /// Row-major `[n_draws, dim]` in network coordinates.
    pub samples: Vec<f64>,
    pub log_q: Vec<f64>,
    pub context: Vec<f64>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.log_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_q.is_empty()
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    /// Values of coordinate `j` over all draws.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.samples.chunks(self.dim).map(|d| d[j]).collect()
    }
}

impl FlowModel {
    pub fn new(config: FlowConfig) -> Self {
        let reversal: Vec<usize> = (0..config.dim).rev().collect();
        let layers = (0..config.transforms)
            .map(|t| {
                let permutation = reversal.clone();
                let mut inverse_permutation = vec![0; config.dim];
                for (j, &p) in permutation.iter().enumerate() {
                    inverse_permutation[p] = j;
                }
                FlowLayer {
                    conditioner: MadeConditioner::new(
                        format!("flow.t{t}"),
                        config.dim,
                        config.context,
                        config.hidden,
                        config.spline,
                    ),
                    permutation,
                    inverse_permutation,
                }
            })
            .collect();
        Self { config, layers }
    }

    /// Registers every layer's weights at identity initialisation.
    pub fn init(
        &self,
        store: &mut ParamStore,
        rng: &mut impl rand::Rng,
    ) -> Result<(), AutodiffError> {
        self.layers
            .iter()
            .try_for_each(|l| l.conditioner.init(store, rng))
    }

    pub fn bind(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
    ) -> Result<BoundFlow<'_>, AutodiffError> {
        let made = self
            .layers
            .iter()
            .map(|l| l.conditioner.bind(tape, store))
            .collect::<Result<_, _>>()?;
        Ok(BoundFlow { model: self, made })
    }

    /// `log q(θ | context)` for a single parameter vector.
    pub fn log_prob(
        &self,
        store: &ParamStore,
        theta: &[f64],
        context: &[f64],
    ) -> Result<f64, FlowError> {
        self.check(theta.len(), context.len())?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, store)?;
        let t = tape.constant(Tensor::row(theta));
        let c = tape.constant(Tensor::row(context));
        let lp = bound.log_prob(&mut tape, t, c)?;
        Ok(tape.value(lp).item())
    }

    /// Weights gathered for repeated gradient-free sampling.
    pub fn prepare(&self, store: &ParamStore) -> Result<PreparedFlow, AutodiffError> {
        PreparedFlow::new(self, store)
    }

    /// `n` seeded draws for one context, without gradients. Agrees with
    /// [`BoundFlow::sample`] on the same noise.
    pub fn sample(
        &self,
        store: &ParamStore,
        context: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<PosteriorDraws, FlowError> {
        self.check(self.config.dim, context.len())?;
        self.prepare(store)?.sample(context, n, seed)
    }

    fn check(&self, dim: usize, ctx: usize) -> Result<(), FlowError> {
        if dim != self.config.dim || ctx != self.config.context {
            return Err(FlowError::Shape(format!(
                "flow expects dim {} and context {}, got {dim} and {ctx}",
                self.config.dim, self.config.context
            )));
        }
        Ok(())
    }
}

/// `[n, dim]` standard normal draws from a seeded stream.
pub fn standard_normal(n: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Tensor::new(&[n, dim], data).expect("normal draws")
}

/// Apply the spline elementwise: `x [n]`, `raw [n, 3K-1]` to `[n, 2]`
/// holding the mapped value and its log-slope.
pub fn spline_op(
    tape: &mut Tape,
    x: Var,
    raw: Var,
    cfg: SplineConfig,
    inverse: bool,
) -> Result<Var, AutodiffError> {
    let n = tape.value(x).len();
    let n_raw = cfg.n_raw();
    let stride = 1 + n_raw;
    let mut out = Vec::with_capacity(2 * n);
    let mut jac = Vec::with_capacity(2 * n * stride);
    {
        let xs = tape.value(x).data();
        let rs = tape.value(raw).data();
        if rs.len() != n * n_raw {
            return Err(AutodiffError::Shape(format!(
                "spline: {n} inputs need {} raw values, got {}",
                n * n_raw,
                rs.len()
            )));
        }
        for (i, &v) in xs.iter().enumerate() {
            let s = RawSpline::new(&rs[i * n_raw..(i + 1) * n_raw], cfg);
            let e = if inverse { s.inverse(v) } else { s.forward(v) };
            out.push(e.value);
            out.push(e.logdet);
            jac.extend_from_slice(&e.d_value);
            jac.extend_from_slice(&e.d_logdet);
        }
    }
    tape.row_map(x, raw, Tensor::new(&[n, 2], out)?, jac)
}

/// Flow weights bound on a tape.
pub struct BoundFlow<'a> {
    model: &'a FlowModel,
    made: Vec<BoundMade>,
}

fn base_log_density(tape: &mut Tape, z: Var) -> Result<Var, AutodiffError> {
    let d = tape.value(z).last_dim() as f64;
    let sq = tape.square(z);
    let s = tape.row_sum(sq);
    let s = tape.scale(s, -0.5);
    Ok(tape.add_scalar(s, -d * HALF_LN_2PI))
}

impl BoundFlow<'_> {
    fn cfg(&self) -> &FlowConfig {
        &self.model.config
    }

    /// Map `θ [B, D]` to base noise, returning `(z [B, D], log q [B])`.
    pub fn to_base(
        &self,
        tape: &mut Tape,
        theta: Var,
        context: Var,
    ) -> Result<(Var, Var), FlowError> {
        let cfg = *self.cfg();
        let shape = tape.shape(theta).to_vec();
        if shape.len() != 2 || shape[1] != cfg.dim {
            return Err(FlowError::Shape(format!(
                "theta {shape:?} for dim {}",
                cfg.dim
            )));
        }
        let b = shape[0];
        let mut h = theta;
        let mut total: Option<Var> = None;
        for (t, (layer, made)) in self.model.layers.iter().zip(&self.made).enumerate() {
            let u = if cfg.dim > 1 {
                tape.permute_cols(h, &layer.permutation)?
            } else {
                h
            };
            let cp = made.project_context(tape, context)?;
            let raw = made.forward(tape, u, cp)?;
            let raw = tape.reshape(raw, &[b * cfg.dim, cfg.spline.n_raw()])?;
            let flat = tape.reshape(u, &[b * cfg.dim])?;
            let out = spline_op(tape, flat, raw, cfg.spline, false)?;
            let y = tape.select_cols(out, 0, 1)?;
            let y = tape.reshape(y, &[b, cfg.dim])?;
            let ld = tape.select_cols(out, 1, 1)?;
            let ld = tape.reshape(ld, &[b, cfg.dim])?;
            let ld = tape.row_sum(ld);
            if !tape.value(out).is_finite() {
                return Err(FlowError::NonFinite { transform: t });
            }
            total = Some(match total {
                Some(acc) => tape.add(acc, ld)?,
                None => ld,
            });
            h = y;
        }
        let base = base_log_density(tape, h)?;
        let lp = match total {
            Some(acc) => tape.add(base, acc)?,
            None => base,
        };
        Ok((h, lp))
    }

    /// `log q(θ | context)` per row of `θ [B, D]`; context is `[B, C]` or
    /// `[1, C]`.
    pub fn log_prob(&self, tape: &mut Tape, theta: Var, context: Var) -> Result<Var, FlowError> {
        Ok(self.to_base(tape, theta, context)?.1)
    }

    /// Push base draws `z [B, D]` through the inverse stack, returning
    /// `(θ [B, D], log q [B])`. Differentiable in the flow weights and the
    /// context.
    pub fn sample(&self, tape: &mut Tape, z: Var, context: Var) -> Result<(Var, Var), FlowError> {
        let cfg = *self.cfg();
        let shape = tape.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != cfg.dim {
            return Err(FlowError::Shape(format!(
                "noise {shape:?} for dim {}",
                cfg.dim
            )));
        }
        let b = shape[0];
        let n_raw = cfg.spline.n_raw();
        let base = base_log_density(tape, z)?;
        let mut y = z;
        let mut inv_total: Option<Var> = None;
        for t in (0..cfg.transforms).rev() {
            let layer = &self.model.layers[t];
            let made = &self.made[t];
            let cp = made.project_context(tape, context)?;
            let mut cols: Vec<Var> = Vec::with_capacity(cfg.dim);
            let mut lds: Vec<Var> = Vec::with_capacity(cfg.dim);
            for i in 0..cfg.dim {
                let pad = tape.constant(Tensor::zeros(&[b, cfg.dim - i]));
                let u_partial = if cols.is_empty() {
                    pad
                } else {
                    let mut parts = cols.clone();
                    parts.push(pad);
                    tape.concat_cols(&parts)?
                };
                let raw = made.forward(tape, u_partial, cp)?;
                let raw_i = tape.select_cols(raw, i * n_raw, n_raw)?;
                let y_i = tape.select_cols(y, i, 1)?;
                let y_i = tape.reshape(y_i, &[b])?;
                let out = spline_op(tape, y_i, raw_i, cfg.spline, true)?;
                if !tape.value(out).is_finite() {
                    return Err(FlowError::NonFinite { transform: t });
                }
                cols.push(tape.select_cols(out, 0, 1)?);
                lds.push(tape.select_cols(out, 1, 1)?);
            }
            let u = if cfg.dim > 1 {
                tape.concat_cols(&cols)?
            } else {
                cols[0]
            };
            let ld = if cfg.dim > 1 {
                tape.concat_cols(&lds)?
            } else {
                lds[0]
            };
            let ld = tape.row_sum(ld);
            inv_total = Some(match inv_total {
                Some(acc) => tape.add(acc, ld)?,
                None => ld,
            });
            y = if cfg.dim > 1 {
                tape.permute_cols(u, &layer.inverse_permutation)?
            } else {
                u
            };
        }
        let lq = match inv_total {
            Some(acc) => tape.sub(base, acc)?,
            None => base,
        };
        Ok((y, lq))
    }
}
