//! Layer building blocks: parameter initialisation and graph construction
//! for dense, 1-D convolution and bidirectional GRU layers.

use rand::Rng;

use super::{AutodiffError, ParamStore, Tape, Tensor, Var};

fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Registers `{name}.weight` `[out, in]` and `{name}.bias` `[out]`, uniform in
/// `±1/sqrt(in)`.
pub fn init_dense(
    store: &mut ParamStore,
    name: &str,
    n_in: usize,
    n_out: usize,
    rng: &mut impl Rng,
) -> Result<(), AutodiffError> {
    let bound = 1.0 / (n_in as f64).sqrt();
    store.insert(
        format!("{name}.weight"),
        Tensor::new(&[n_out, n_in], uniform(rng, n_in * n_out, bound))?,
    )?;
    store.insert(
        format!("{name}.bias"),
        Tensor::new(&[n_out], uniform(rng, n_out, bound))?,
    )
}

pub fn init_conv1d(
    store: &mut ParamStore,
    name: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    rng: &mut impl Rng,
) -> Result<(), AutodiffError> {
    let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
    store.insert(
        format!("{name}.weight"),
        Tensor::new(
            &[c_out, c_in, kernel],
            uniform(rng, c_out * c_in * kernel, bound),
        )?,
    )?;
    store.insert(
        format!("{name}.bias"),
        Tensor::new(&[c_out], uniform(rng, c_out, bound))?,
    )
}

/// Registers one GRU direction: `w_ih [3H, in]`, `w_hh [3H, H]`, `b_ih`, `b_hh`.
/// Gate order within the `3H` axis is reset, update, candidate.
pub fn init_gru(
    store: &mut ParamStore,
    name: &str,
    n_in: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<(), AutodiffError> {
    let bound = 1.0 / (hidden as f64).sqrt();
    let g = 3 * hidden;
    store.insert(
        format!("{name}.w_ih"),
        Tensor::new(&[g, n_in], uniform(rng, g * n_in, bound))?,
    )?;
    store.insert(
        format!("{name}.w_hh"),
        Tensor::new(&[g, hidden], uniform(rng, g * hidden, bound))?,
    )?;
    store.insert(
        format!("{name}.b_ih"),
        Tensor::new(&[g], uniform(rng, g, bound))?,
    )?;
    store.insert(
        format!("{name}.b_hh"),
        Tensor::new(&[g], uniform(rng, g, bound))?,
    )
}

#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: Var,
    pub bias: Var,
}

impl Dense {
    pub fn bind(tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Self, AutodiffError> {
        Ok(Self {
            weight: tape.param(store, &format!("{name}.weight"))?,
            bias: tape.param(store, &format!("{name}.bias"))?,
        })
    }

    /// `y = x Wᵀ + b` over the last axis of `x`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let xw = tape.matmul_t(x, self.weight)?;
        tape.add_row(xw, self.bias)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
}

impl Conv1d {
    pub fn bind(
        tape: &mut Tape,
        store: &ParamStore,
        name: &str,
        stride: usize,
    ) -> Result<Self, AutodiffError> {
        Ok(Self {
            weight: tape.param(store, &format!("{name}.weight"))?,
            bias: tape.param(store, &format!("{name}.bias"))?,
            stride,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        tape.conv1d(x, self.weight, self.bias, self.stride)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Gru {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
    pub hidden: usize,
}

impl Gru {
    pub fn bind(tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Self, AutodiffError> {
        let w_hh = tape.param(store, &format!("{name}.w_hh"))?;
        let hidden = tape.shape(w_hh)[1];
        Ok(Self {
            w_ih: tape.param(store, &format!("{name}.w_ih"))?,
            w_hh,
            b_ih: tape.param(store, &format!("{name}.b_ih"))?,
            b_hh: tape.param(store, &format!("{name}.b_hh"))?,
            hidden,
        })
    }

    /// Runs over `seq [batch, len, feat]`, returning one `[batch, H]` state
    /// per step in sequence order. `reverse` walks from the last step.
    pub fn run(&self, tape: &mut Tape, seq: Var, reverse: bool) -> Result<Vec<Var>, AutodiffError> {
        let s = tape.shape(seq).to_vec();
        if s.len() != 3 || s[1] == 0 {
            return Err(AutodiffError::Contract(format!(
                "GRU needs a non-empty [batch, len, feat] sequence, got {s:?}"
            )));
        }
        let (batch, len) = (s[0], s[1]);
        let h_dim = self.hidden;
        let proj = tape.matmul_t(seq, self.w_ih)?;
        let proj = tape.add_row(proj, self.b_ih)?;
        let mut h = tape.constant(Tensor::zeros(&[batch, h_dim]));
        let mut states = vec![h; len];
        let order: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for t in order {
            let gx = tape.select_step(proj, t)?;
            let gh = tape.matmul_t(h, self.w_hh)?;
            let gh = tape.add_row(gh, self.b_hh)?;
            let (xr, xz, xn) = (
                tape.select_cols(gx, 0, h_dim)?,
                tape.select_cols(gx, h_dim, h_dim)?,
                tape.select_cols(gx, 2 * h_dim, h_dim)?,
            );
            let (hr, hz, hn) = (
                tape.select_cols(gh, 0, h_dim)?,
                tape.select_cols(gh, h_dim, h_dim)?,
                tape.select_cols(gh, 2 * h_dim, h_dim)?,
            );
            let r = tape.add(xr, hr)?;
            let r = tape.sigmoid(r);
            let z = tape.add(xz, hz)?;
            let z = tape.sigmoid(z);
            let rn = tape.mul(r, hn)?;
            let n = tape.add(xn, rn)?;
            let n = tape.tanh(n);
            let keep = tape.one_minus(z);
            let a = tape.mul(keep, n)?;
            let b = tape.mul(z, h)?;
            h = tape.add(a, b)?;
            states[t] = h;
        }
        Ok(states)
    }
}

/// Bidirectional GRU: `[batch, len, feat] -> [batch, len, 2H]`, forward
/// states first in each step's feature vector.
pub fn bigru(tape: &mut Tape, seq: Var, fwd: &Gru, bwd: &Gru) -> Result<Var, AutodiffError> {
    let f = fwd.run(tape, seq, false)?;
    let b = bwd.run(tape, seq, true)?;
    let mut steps = Vec::with_capacity(f.len());
    for (hf, hb) in f.into_iter().zip(b) {
        steps.push(tape.concat_cols(&[hf, hb])?);
    }
    tape.stack_steps(&steps)
}
