use super::{contract, BaselineError};

/// Per-bin observed counts `S`, model counts `m`, background estimate `B`
/// and background standard deviation `σ_b`. A bin with `σ_b = 0` has no
/// background to profile and contributes the pure Poisson (Cash) term.
#[derive(Clone, Copy, Debug)]
pub struct PgStatInputs<'a> {
    pub counts: &'a [f64],
    pub model: &'a [f64],
    pub background: &'a [f64],
    pub background_sigma: &'a [f64],
}

impl<'a> PgStatInputs<'a> {
    /// Source-only data: zero background, nothing profiled.
    pub fn without_background(counts: &'a [f64], model: &'a [f64], zeros: &'a [f64]) -> Self {
        Self {
            counts,
            model,
            background: zeros,
            background_sigma: zeros,
        }
    }

    fn validate(&self) -> Result<(), BaselineError> {
        let n = self.counts.len();
        if self.model.len() != n || self.background.len() != n || self.background_sigma.len() != n {
            return Err(contract(format!(
                "pgstat lengths differ: counts {n}, model {}, background {}, sigma {}",
                self.model.len(),
                self.background.len(),
                self.background_sigma.len()
            )));
        }
        for i in 0..n {
            let (s, m, b, sb) = (
                self.counts[i],
                self.model[i],
                self.background[i],
                self.background_sigma[i],
            );
            if !(s >= 0.0)
                || !(m >= 0.0)
                || !b.is_finite()
                || !(sb >= 0.0)
                || !sb.is_finite()
                || !m.is_finite()
            {
                return Err(contract(format!(
                    "pgstat bin {i}: S={s}, m={m}, B={b}, sigma={sb}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgStat {
    pub value: f64,
    /// Bins with `m + f = 0` but `S > 0`; any entry makes `value` infinite.
    pub infinite_bins: Vec<usize>,
}

impl PgStat {
    pub fn is_finite(&self) -> bool {
        self.infinite_bins.is_empty()
    }
}

/// Non-negative root of `f² + f(m − B + σ²) + (σ²m − σ²S − Bm) = 0`, clamped
/// at zero.
pub fn profiled_background(s: f64, m: f64, b: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let s2 = sigma * sigma;
    let p = m - b + s2;
    let q = s2 * (m - s) - b * m;
    let disc = (p * p - 4.0 * q).max(0.0).sqrt();
    // Cancellation-free form of the larger root.
    let f = if p > 0.0 {
        -2.0 * q / (p + disc)
    } else {
        0.5 * (disc - p)
    };
    f.max(0.0)
}

/// One bin's contribution with its profiled background.
pub fn pgstat_bin(s: f64, m: f64, b: f64, sigma: f64) -> f64 {
    let f = profiled_background(s, m, b, sigma);
    let mu = m + f;
    let poisson = if s == 0.0 {
        2.0 * mu
    } else if mu == 0.0 {
        f64::INFINITY
    } else {
        2.0 * (mu - s + s * (s / mu).ln())
    };
    let gauss = if sigma == 0.0 {
        0.0
    } else {
        ((f - b) / sigma).powi(2)
    };
    poisson + gauss
}

pub fn pgstat(inp: &PgStatInputs) -> Result<PgStat, BaselineError> {
    inp.validate()?;
    let mut value = 0.0;
    let mut infinite_bins = Vec::new();
    for i in 0..inp.counts.len() {
        let v = pgstat_bin(
            inp.counts[i],
            inp.model[i],
            inp.background[i],
            inp.background_sigma[i],
        );
        if v.is_infinite() {
            infinite_bins.push(i);
        }
        value += v;
    }
    Ok(PgStat {
        value,
        infinite_bins,
    })
}

pub fn reduced_pgstat(stat: f64, n_bins: usize, n_free: usize) -> Result<f64, BaselineError> {
    if n_bins <= n_free {
        return Err(contract(format!(
            "{n_bins} bins leave no degrees of freedom for {n_free} parameters"
        )));
    }
    Ok(stat / (n_bins - n_free) as f64)
}
