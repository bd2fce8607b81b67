//! Masked autoregressive conditioner producing spline parameters.

use rand::Rng;

use super::spline::{SplineConfig, SplineParams};
use super::FlowError;
use crate::autodiff::{nn, AutodiffError, ParamStore, Tape, Tensor, Var};

/// Degrees and masks of a two-hidden-layer MADE network whose output block
/// `i` depends only on inputs `0..i` and on the context.
///
/// Weights live in a [`ParamStore`] under `{prefix}.in`, `{prefix}.ctx`,
/// `{prefix}.hidden` and `{prefix}.out`.
#[derive(Clone, Debug, PartialEq)]
pub struct MadeConditioner {
    pub prefix: String,
    pub dim: usize,
    pub context: usize,
    pub hidden: usize,
    pub spline: SplineConfig,
    pub input_degrees: Vec<usize>,
    pub hidden_degrees: Vec<usize>,
    pub output_degrees: Vec<usize>,
    mask_in: Tensor,
    mask_hidden: Tensor,
    mask_out: Tensor,
}

fn mask(out_deg: &[usize], in_deg: &[usize], rule: impl Fn(usize, usize) -> bool) -> Tensor {
    let mut data = Vec::with_capacity(out_deg.len() * in_deg.len());
    for &o in out_deg {
        data.extend(in_deg.iter().map(|&i| if rule(o, i) { 1.0 } else { 0.0 }));
    }
    Tensor::new(&[out_deg.len(), in_deg.len()], data).expect("mask shape")
}

impl MadeConditioner {
    pub fn new(
        prefix: impl Into<String>,
        dim: usize,
        context: usize,
        hidden: usize,
        spline: SplineConfig,
    ) -> Self {
        let input_degrees: Vec<usize> = (1..=dim).collect();
        // Degree-0 units see only the context and may feed every output.
        let hidden_degrees: Vec<usize> = (0..hidden).map(|h| h % dim).collect();
        let n_raw = spline.n_raw();
        let output_degrees: Vec<usize> = (0..dim * n_raw).map(|o| o / n_raw + 1).collect();
        let mask_in = mask(&hidden_degrees, &input_degrees, |o, i| o >= i);
        let mask_hidden = mask(&hidden_degrees, &hidden_degrees, |o, i| o >= i);
        let mask_out = mask(&output_degrees, &hidden_degrees, |o, i| o > i);
        Self {
            prefix: prefix.into(),
            dim,
            context,
            hidden,
            spline,
            input_degrees,
            hidden_degrees,
            output_degrees,
            mask_in,
            mask_hidden,
            mask_out,
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.dim * self.spline.n_raw()
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// Registers weights. The output layer starts at zero with biases giving
    /// identity splines.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<(), AutodiffError> {
        nn::init_dense(store, &self.name("in"), self.dim, self.hidden, rng)?;
        let bound = 1.0 / (self.context.max(1) as f64).sqrt();
        let ctx = (0..self.hidden * self.context)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        store.insert(
            self.name("ctx.weight"),
            Tensor::new(&[self.hidden, self.context], ctx)?,
        )?;
        nn::init_dense(store, &self.name("hidden"), self.hidden, self.hidden, rng)?;
        let n_out = self.n_outputs();
        store.insert(
            self.name("out.weight"),
            Tensor::zeros(&[n_out, self.hidden]),
        )?;
        let bias: Vec<f64> = (0..self.dim)
            .flat_map(|_| self.spline.identity_raw())
            .collect();
        store.insert(self.name("out.bias"), Tensor::new(&[n_out], bias)?)
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<BoundMade, AutodiffError> {
        let masked = |tape: &mut Tape, name: &str, m: &Tensor| -> Result<Var, AutodiffError> {
            let w = tape.param(store, name)?;
            let mv = tape.constant(m.clone());
            tape.mul(w, mv)
        };
        Ok(BoundMade {
            w_in: masked(tape, &self.name("in.weight"), &self.mask_in)?,
            b_in: tape.param(store, &self.name("in.bias"))?,
            w_ctx: tape.param(store, &self.name("ctx.weight"))?,
            w_hidden: masked(tape, &self.name("hidden.weight"), &self.mask_hidden)?,
            b_hidden: tape.param(store, &self.name("hidden.bias"))?,
            w_out: masked(tape, &self.name("out.weight"), &self.mask_out)?,
            b_out: tape.param(store, &self.name("out.bias"))?,
        })
    }

    /// Raw outputs (`D·(3K-1)` values) for one input/context pair.
    pub fn raw_outputs(
        &self,
        store: &ParamStore,
        z: &[f64],
        context: &[f64],
    ) -> Result<Vec<f64>, FlowError> {
        if z.len() != self.dim || context.len() != self.context {
            return Err(FlowError::Shape(format!(
                "conditioner expects {} inputs and {} context values, got {} and {}",
                self.dim,
                self.context,
                z.len(),
                context.len()
            )));
        }
        let mut tape = Tape::new();
        let made = self.bind(&mut tape, store)?;
        let zv = tape.constant(Tensor::row(z));
        let cv = tape.constant(Tensor::row(context));
        let cp = made.project_context(&mut tape, cv)?;
        let out = made.forward(&mut tape, zv, cp)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Spline parameters of every dimension given `z` (only `z[..i]` matters
    /// for dimension `i`).
    pub fn spline_params(
        &self,
        store: &ParamStore,
        z: &[f64],
        context: &[f64],
    ) -> Result<Vec<SplineParams>, FlowError> {
        let raw = self.raw_outputs(store, z, context)?;
        Ok(raw
            .chunks(self.spline.n_raw())
            .map(|r| SplineParams::from_raw(r, self.spline))
            .collect())
    }
}

/// Conditioner weights bound on a tape, masks already applied.
#[derive(Clone, Copy, Debug)]
pub struct BoundMade {
    w_in: Var,
    b_in: Var,
    w_ctx: Var,
    w_hidden: Var,
    b_hidden: Var,
    w_out: Var,
    b_out: Var,
}

impl BoundMade {
    /// Context contribution to the first hidden layer, `[rows, H]`.
    pub fn project_context(&self, tape: &mut Tape, context: Var) -> Result<Var, AutodiffError> {
        tape.matmul_t(context, self.w_ctx)
    }

    /// `u [B, D]` with projected context `[B, H]` or `[1, H]` to raw spline
    /// parameters `[B, D·(3K-1)]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        u: Var,
        context_proj: Var,
    ) -> Result<Var, AutodiffError> {
        let h = tape.matmul_t(u, self.w_in)?;
        let h = tape.add_row(h, self.b_in)?;
        let h = if tape.shape(context_proj)[0] == tape.shape(h)[0] {
            tape.add(h, context_proj)?
        } else {
            tape.add_row(h, context_proj)?
        };
        let h = tape.gelu(h);
        let h = tape.matmul_t(h, self.w_hidden)?;
        let h = tape.add_row(h, self.b_hidden)?;
        let h = tape.gelu(h);
        let o = tape.matmul_t(h, self.w_out)?;
        tape.add_row(o, self.b_out)
    }
}
