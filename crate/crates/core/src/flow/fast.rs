//! Gradient-free sampling path.
//!
//! Pass `i` of an inverse transform only needs output block `i`, which reads
//! hidden units of degree `<= i`. Gathering those units per pass ahead of
//! time skips most of the masked-out arithmetic of the full conditioner.

use super::spline::{rq_spline_inverse, SplineParams};
use super::{standard_normal, FlowError, FlowModel, PosteriorDraws, HALF_LN_2PI};
use crate::autodiff::gemm::{gemm, View};
use crate::autodiff::{gelu_scalar, AutodiffError, ParamStore};

/// Weights of one autoregressive pass restricted to the units it reads.
#[derive(Clone, Debug)]
struct Pass {
    units: Vec<usize>,
    /// `[units, i]`: the first `i` inputs only.
    w_in: Vec<f64>,
    w_hidden: Vec<f64>,
    b_hidden: Vec<f64>,
    /// `[n_raw, units]`.
    w_out: Vec<f64>,
    b_out: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Layer {
    w_ctx: Vec<f64>,
    b_in: Vec<f64>,
    passes: Vec<Pass>,
    inverse_permutation: Vec<usize>,
}

/// Flow weights laid out for fast sampling. Build once per parameter set.
#[derive(Clone, Debug)]
pub struct PreparedFlow {
    dim: usize,
    context: usize,
    hidden: usize,
    spline: super::SplineConfig,
    layers: Vec<Layer>,
}

fn weight<'a>(store: &'a ParamStore, name: &str) -> Result<&'a [f64], AutodiffError> {
    store
        .value(name)
        .map(|t| t.data())
        .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
}

impl PreparedFlow {
    pub fn new(model: &FlowModel, store: &ParamStore) -> Result<Self, AutodiffError> {
        let cfg = model.config;
        let (d, h, n_raw) = (cfg.dim, cfg.hidden, cfg.spline.n_raw());
        let mut layers = Vec::with_capacity(model.layers.len());
        for layer in &model.layers {
            let m = &layer.conditioner;
            let p = |part: &str| format!("{}.{part}", m.prefix);
            let w_in = weight(store, &p("in.weight"))?;
            let w_hidden = weight(store, &p("hidden.weight"))?;
            let b_hidden = weight(store, &p("hidden.bias"))?;
            let w_out = weight(store, &p("out.weight"))?;
            let b_out = weight(store, &p("out.bias"))?;
            let hd = &m.hidden_degrees;
            let mut passes = Vec::with_capacity(d);
            for i in 0..d {
                let units: Vec<usize> = (0..h).filter(|&u| hd[u] <= i).collect();
                let mut wi = Vec::with_capacity(units.len() * i);
                let mut wh = Vec::with_capacity(units.len() * units.len());
                for &u in &units {
                    // Input j has degree j + 1 and feeds units of degree >= j + 1.
                    wi.extend((0..i).map(|j| if hd[u] > j { w_in[u * d + j] } else { 0.0 }));
                    wh.extend(units.iter().map(|&v| {
                        if hd[u] >= hd[v] {
                            w_hidden[u * h + v]
                        } else {
                            0.0
                        }
                    }));
                }
                let mut wo = Vec::with_capacity(n_raw * units.len());
                for r in i * n_raw..(i + 1) * n_raw {
                    wo.extend(units.iter().map(|&v| {
                        if m.output_degrees[r] > hd[v] {
                            w_out[r * h + v]
                        } else {
                            0.0
                        }
                    }));
                }
                passes.push(Pass {
                    w_in: wi,
                    w_hidden: wh,
                    b_hidden: units.iter().map(|&u| b_hidden[u]).collect(),
                    w_out: wo,
                    b_out: b_out[i * n_raw..(i + 1) * n_raw].to_vec(),
                    units,
                });
            }
            layers.push(Layer {
                w_ctx: weight(store, &p("ctx.weight"))?.to_vec(),
                b_in: weight(store, &p("in.bias"))?.to_vec(),
                passes,
                inverse_permutation: layer.inverse_permutation.clone(),
            });
        }
        Ok(Self {
            dim: d,
            context: cfg.context,
            hidden: h,
            spline: cfg.spline,
            layers,
        })
    }

    /// `n` seeded draws for one context; matches [`FlowModel::sample`].
    pub fn sample(
        &self,
        context: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<PosteriorDraws, FlowError> {
        if n == 0 {
            return Err(FlowError::NoDraws);
        }
        if context.len() != self.context {
            return Err(FlowError::Shape(format!(
                "flow expects context {}, got {}",
                self.context,
                context.len()
            )));
        }
        let (d, h, n_raw) = (self.dim, self.hidden, self.spline.n_raw());
        let mut y = standard_normal(n, d, seed).into_data();
        let mut lq: Vec<f64> = y
            .chunks(d)
            .map(|z| -0.5 * z.iter().map(|v| v * v).sum::<f64>() - d as f64 * HALF_LN_2PI)
            .collect();
        let mut u = vec![0.0; n * d];
        let mut h1 = Vec::new();
        let mut h2 = Vec::new();
        let mut raw = Vec::new();
        for (t, layer) in self.layers.iter().enumerate().rev() {
            let mut cp = layer.b_in.clone();
            gemm(
                h,
                self.context,
                1,
                1.0,
                View::rows(&layer.w_ctx, self.context),
                View::rows(context, 1),
                1.0,
                &mut cp,
                1,
                1,
            );
            for (i, pass) in layer.passes.iter().enumerate() {
                let r = pass.units.len();
                h1.clear();
                for _ in 0..n {
                    h1.extend(pass.units.iter().map(|&k| cp[k]));
                }
                gemm(
                    n,
                    i,
                    r,
                    1.0,
                    View {
                        data: &u,
                        rs: d,
                        cs: 1,
                    },
                    View::trans(&pass.w_in, i.max(1)),
                    1.0,
                    &mut h1,
                    r,
                    1,
                );
                h1.iter_mut().for_each(|v| *v = gelu_scalar(*v));
                h2.clear();
                for _ in 0..n {
                    h2.extend_from_slice(&pass.b_hidden);
                }
                gemm(
                    n,
                    r,
                    r,
                    1.0,
                    View::rows(&h1, r),
                    View::trans(&pass.w_hidden, r),
                    1.0,
                    &mut h2,
                    r,
                    1,
                );
                h2.iter_mut().for_each(|v| *v = gelu_scalar(*v));
                raw.clear();
                for _ in 0..n {
                    raw.extend_from_slice(&pass.b_out);
                }
                gemm(
                    n,
                    r,
                    n_raw,
                    1.0,
                    View::rows(&h2, r),
                    View::trans(&pass.w_out, r),
                    1.0,
                    &mut raw,
                    n_raw,
                    1,
                );
                for row in 0..n {
                    let sp =
                        SplineParams::from_raw(&raw[row * n_raw..(row + 1) * n_raw], self.spline);
                    let (x, ld) = rq_spline_inverse(y[row * d + i], &sp);
                    if !x.is_finite() || !ld.is_finite() {
                        return Err(FlowError::NonFinite { transform: t });
                    }
                    u[row * d + i] = x;
                    lq[row] -= ld;
                }
            }
            for row in 0..n {
                for (j, &p) in layer.inverse_permutation.iter().enumerate() {
                    y[row * d + j] = u[row * d + p];
                }
            }
        }
        Ok(PosteriorDraws {
            dim: d,
            samples: y,
            log_q: lq,
            context: context.to_vec(),
        })
    }
}
