//! Central finite-difference checks of reverse-mode gradients.
//!
//! Relative error of one component is `|analytic - numeric| / max(|analytic|,
//! |numeric|, floor)`; the floor keeps rounding noise on near-zero gradients
//! from dominating.

use super::{AutodiffError, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_FLOOR: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(input or parameter label, component)` of the worst component.
    pub worst: (String, usize),
    pub checked: usize,
}

impl GradCheck {
    fn new() -> Self {
        Self {
            max_rel_err: 0.0,
            worst: (String::new(), 0),
            checked: 0,
        }
    }

    fn record(&mut self, label: &str, i: usize, analytic: f64, numeric: f64, floor: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.checked += 1;
        if err > self.max_rel_err || err.is_nan() {
            self.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
            self.worst = (label.to_string(), i);
        }
    }
}

/// Evenly spaced component indices, at most `limit` of them.
fn components(n: usize, limit: usize) -> Vec<usize> {
    if n <= limit {
        (0..n).collect()
    } else {
        (0..limit).map(|j| j * n / limit).collect()
    }
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64, AutodiffError> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(AutodiffError::NotScalar(t.shape().to_vec()));
    }
    Ok(t.item())
}

/// Check `f(inputs)` against finite differences in every input tensor.
pub fn check_inputs<F>(inputs: &[Tensor], limit: usize, f: F) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |vals: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut report = GradCheck::new();
    for (k, (&v, t)) in vars.iter().zip(inputs).enumerate() {
        let analytic = grads.get_or_zeros(&tape, v);
        for i in components(t.len(), limit) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += DEFAULT_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= DEFAULT_STEP;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * DEFAULT_STEP);
            report.record(&format!("input{k}"), i, analytic[i], numeric, DEFAULT_FLOOR);
        }
    }
    Ok(report)
}

/// Check `f(store)` against finite differences in every unfrozen parameter
/// whose name starts with `prefix`.
pub fn check_params<F>(
    store: &ParamStore,
    prefix: &str,
    limit: usize,
    f: F,
) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, AutodiffError>,
{
    let eval = |s: &ParamStore| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        scalar_of(&tape, out)
    };
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;
    let mut accumulated = store.clone();
    accumulated.zero_grad();
    accumulated.accumulate(&tape, &grads)?;
    let mut report = GradCheck::new();
    let names: Vec<String> = store
        .iter()
        .filter(|(n, e)| n.starts_with(prefix) && !e.frozen)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in names {
        let base = store.value(&name).expect("listed").clone();
        let analytic = accumulated.entry(&name).expect("listed").grad.clone();
        for i in components(base.len(), limit) {
            let mut probe = store.clone();
            let mut t = base.clone();
            t.data_mut()[i] += DEFAULT_STEP;
            probe.set_value(&name, t)?;
            let fp = eval(&probe)?;
            let mut t = base.clone();
            t.data_mut()[i] -= DEFAULT_STEP;
            probe.set_value(&name, t)?;
            let fm = eval(&probe)?;
            report.record(
                &name,
                i,
                analytic[i],
                (fp - fm) / (2.0 * DEFAULT_STEP),
                DEFAULT_FLOOR,
            );
        }
    }
    Ok(report)
}
