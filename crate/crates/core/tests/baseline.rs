use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fspnet::baseline::*;
use fspnet::dataset::{params_to_unit, PriorBox};
use fspnet::physics::{
    forward_model, EnergyGrid, PhysParams, ResponseDescriptor, ResponseModel, Spectrum,
};

/// Golden-section minimisation of the un-profiled bin statistic over `f`.
fn brute_force_bin(s: f64, m: f64, b: f64, sigma: f64) -> f64 {
    let g = |f: f64| {
        let mu = m + f;
        let p = if s == 0.0 {
            2.0 * mu
        } else {
            2.0 * (mu - s + s * (s / mu).ln())
        };
        p + ((f - b) / sigma).powi(2)
    };
    let (mut lo, mut hi) = (0.0, s.max(b).max(1.0) * 4.0 + 10.0 * sigma);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..300 {
        let a = hi - r * (hi - lo);
        let c = lo + r * (hi - lo);
        if g(a) < g(c) {
            hi = c;
        } else {
            lo = a;
        }
    }
    g(0.5 * (lo + hi)).min(g(0.0))
}

#[test]
fn pgstat_profiling_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let s = rng.random_range(0..40) as f64;
        let m = rng.random_range(0.05..30.0);
        let b = rng.random_range(0.0..10.0);
        let sigma = rng.random_range(0.2..5.0);
        let want = brute_force_bin(s, m, b, sigma);
        let got = pgstat_bin(s, m, b, sigma);
        assert!(
            (got - want).abs() < 1e-6,
            "S={s} m={m} B={b} sigma={sigma}: {got} vs {want}"
        );
    }
    let one = brute_force_bin(10.0, 8.0, 1.0, 1.0);
    assert!((pgstat_bin(10.0, 8.0, 1.0, 1.0) - one).abs() < 1e-6);
}

#[test]
fn pgstat_examples() {
    // S = m + B: f = B solves the quadratic and both terms vanish.
    for (m, b, sigma) in [(8.0, 2.0, 1.0), (0.5, 3.0, 0.3), (100.0, 7.0, 4.0)] {
        let f = profiled_background(m + b, m, b, sigma);
        assert!((f - b).abs() < 1e-12 * b.max(1.0));
        let resid = f * f
            + f * (m - b + sigma * sigma)
            + (sigma * sigma * m - sigma * sigma * (m + b) - b * m);
        assert!(resid.abs() < 1e-9);
        assert!(pgstat_bin(m + b, m, b, sigma).abs() < 1e-12);
    }
    // Cash limit.
    let s = [3.0, 0.0, 7.0, 12.0];
    let m = [2.5, 0.4, 9.0, 12.0];
    let z = [0.0; 4];
    let got = pgstat(&PgStatInputs::without_background(&s, &m, &z)).unwrap();
    let cash: f64 = s
        .iter()
        .zip(&m)
        .map(|(s, m)| 2.0 * (m - s + if *s > 0.0 { s * (s / m).ln() } else { 0.0 }))
        .sum();
    assert!((got.value - cash).abs() < 1e-12);
    assert_eq!(
        pgstat(&PgStatInputs::without_background(&s, &s, &z))
            .unwrap()
            .value,
        0.0
    );
    // Zero model under positive counts.
    let p = pgstat(&PgStatInputs::without_background(
        &[1.0, 2.0],
        &[1.0, 0.0],
        &[0.0; 2],
    ))
    .unwrap();
    assert!(!p.is_finite());
    assert_eq!(p.infinite_bins, vec![1]);
    assert!(p.value.is_infinite());
    assert!(pgstat(&PgStatInputs::without_background(&[1.0], &[-1.0], &[0.0])).is_err());
    assert!(pgstat(&PgStatInputs::without_background(
        &[1.0, 2.0],
        &[1.0],
        &[0.0, 0.0]
    ))
    .is_err());
}

#[test]
fn reduced_pgstat_examples() {
    assert_eq!(reduced_pgstat(59.0, 64, 5).unwrap(), 1.0);
    assert_eq!(reduced_pgstat(0.0, 64, 5).unwrap(), 0.0);
    assert!(reduced_pgstat(1.0, 5, 5).is_err());
}

proptest! {
    #[test]
    fn pgstat_is_non_negative(s in 0u32..200, m in 0.01f64..200.0, b in 0.0f64..20.0, sigma in 0.0f64..10.0) {
        let v = pgstat_bin(s as f64, m, b, sigma);
        prop_assert!(v >= -1e-9 * (s as f64 + m + 1.0), "{}", v);
    }

    #[test]
    fn time_estimate_is_monotone(
        n in 1.0f64..1e4, tau in 1.0f64..100.0, b in 0.0f64..1e3, t in 0.1f64..100.0, l in 1.0f64..1e4, nv in 1.0f64..1e4,
        bump in 1.01f64..3.0,
    ) {
        let base = mcmc_time_estimate(n, tau, b, t, l, nv).unwrap();
        prop_assert!(mcmc_time_estimate(n * bump, tau, b, t, l, nv).unwrap() > base);
        prop_assert!(mcmc_time_estimate(n, tau * bump, b, t, l, nv).unwrap() > base);
        prop_assert!(mcmc_time_estimate(n, tau, b, t * bump, l, nv).unwrap() > base);
        prop_assert!(mcmc_time_estimate(n, tau, b, t, l, nv * bump).unwrap() > base);
        prop_assert!(mcmc_time_estimate(n, tau, b, t, l * bump, nv).unwrap() < base);
        // (nτ + b)/(l + b) rises with b only when l exceeds nτ.
        let b2 = b * bump + 1.0;
        let up = mcmc_time_estimate(n, tau, b2, t, l, nv).unwrap();
        if (l - n * tau).abs() > 1e-9 * l {
            prop_assert_eq!(up > base, l > n * tau);
        }
    }
}

#[test]
fn time_estimate_examples() {
    let v = mcmc_time_estimate(1000.0, 1.0, 0.0, 2.0, 500.0, 10.0).unwrap();
    assert_eq!(v, 1000.0 * 2.0 / 500.0 * 10.0);
    let a = mcmc_time_estimate(1000.0, 12.0, 300.0, 8.0, 2000.0, 2160.0).unwrap();
    let b = mcmc_time_estimate(1000.0, 12.0, 300.0, 8.0, 2000.0, 4320.0).unwrap();
    assert_eq!(b, 2.0 * a);
    assert!(mcmc_time_estimate(0.0, 1.0, 0.0, 1.0, 1.0, 1.0).is_err());
    assert!(mcmc_time_estimate(1.0, 1.0, -1.0, 1.0, 1.0, 1.0).is_err());
}

fn ar1(n: usize, rho: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = 0.0;
    let innov = (1.0 - rho * rho).sqrt();
    (0..n)
        .map(|_| {
            x = rho * x + innov * rng.sample::<f64, _>(StandardNormal);
            x
        })
        .collect()
}

#[test]
fn autocorr_time_examples() {
    let white = ar1(10_000, 0.0, 1);
    let t = autocorr_time(&white, 1).unwrap();
    assert!((t.per_coordinate[0] - 1.0).abs() < 0.2, "{t:?}");

    for seed in 0..5 {
        let x = ar1(50_000, 0.9, seed);
        let t = autocorr_time(&x, 1).unwrap().max;
        assert!((t - 19.0).abs() < 0.2 * 19.0, "tau {t}");
    }

    let doubled: Vec<f64> = white.iter().flat_map(|v| [*v, *v]).collect();
    let t2 = autocorr_time(&doubled, 1).unwrap().max;
    let t1 = autocorr_time(&white, 1).unwrap().max;
    assert!((t2 / t1 - 2.0).abs() < 0.4, "{t1} -> {t2}");
    let ar = ar1(20_000, 0.9, 3);
    let ar2: Vec<f64> = ar.iter().flat_map(|v| [*v, *v]).collect();
    let ratio = autocorr_time(&ar2, 1).unwrap().max / autocorr_time(&ar, 1).unwrap().max;
    assert!((ratio - 2.0).abs() < 0.4, "{ratio}");

    let flat = autocorr_time(&[0.5; 300], 1).unwrap();
    assert_eq!(flat.per_coordinate, vec![300.0]);
    assert_eq!(flat.degenerate, vec![true]);
    assert!(autocorr_time(&[0.0; 99], 1).is_err());

    // Interleaved coordinates are analysed separately.
    let rows: Vec<f64> = white
        .iter()
        .zip(&ar1(10_000, 0.9, 9))
        .flat_map(|(a, b)| [*a, *b])
        .collect();
    let t = autocorr_time(&rows, 2).unwrap();
    assert!(t.per_coordinate[0] < 1.3 && t.per_coordinate[1] > 14.0);
    assert_eq!(t.max, t.per_coordinate[1]);
}

#[test]
fn flat_target_recovers_uniform_box() {
    let cfg = ChainConfig {
        initial_scale: vec![0.5; 3],
        ..ChainConfig::new(3, 60_000, 2_000, 5)
    };
    let r = mh_chain_on(|_| 7.0, &[0.2, -0.4, 0.9], &cfg).unwrap();
    assert_eq!(r.len(), 58_000);
    let tau = autocorr_time(&r.samples, 3).unwrap();
    for j in 0..3 {
        let col: Vec<f64> = r.samples.iter().skip(j).step_by(3).copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        let se = (var * tau.per_coordinate[j] / col.len() as f64).sqrt();
        assert!(
            mean.abs() < 3.0 * se,
            "coordinate {j}: mean {mean}, se {se}"
        );
        assert!((var - 1.0 / 3.0).abs() < 0.03, "coordinate {j}: var {var}");
    }
    assert!(r.warnings.is_empty());
}

#[test]
fn gaussian_surrogate_matches_moments() {
    let mu = [0.2, -0.3];
    let sd = [0.1, 0.05];
    let rho: f64 = 0.6;
    let target = |x: &[f64]| {
        let a = (x[0] - mu[0]) / sd[0];
        let b = (x[1] - mu[1]) / sd[1];
        (a * a - 2.0 * rho * a * b + b * b) / (1.0 - rho * rho)
    };
    let cfg = ChainConfig::new(2, 120_000, 5_000, 3);
    let r = mh_chain_on(target, &[0.0, 0.0], &cfg).unwrap();
    assert!(
        (r.acceptance_rate - TARGET_ACCEPTANCE).abs() < 0.08,
        "{}",
        r.acceptance_rate
    );
    let tau = autocorr_time(&r.samples, 2).unwrap();
    for j in 0..2 {
        let col: Vec<f64> = r.samples.iter().skip(j).step_by(2).copied().collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var * tau.per_coordinate[j] / n).sqrt();
        assert!(
            (mean - mu[j]).abs() < 3.0 * se,
            "coordinate {j}: {mean} vs {}",
            mu[j]
        );
        assert!(
            (var / (sd[j] * sd[j]) - 1.0).abs() < 0.1,
            "coordinate {j}: var {var}"
        );
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[test]
fn two_state_detailed_balance() {
    // Truncated normal on [-1, 1]; states split at zero.
    let (m, s) = (0.3, 0.5);
    let cfg = ChainConfig {
        initial_scale: vec![0.4],
        ..ChainConfig::new(1, 400_000, 0, 11)
    };
    let r = mh_chain_on(|x| ((x[0] - m) / s).powi(2), &[0.0], &cfg).unwrap();
    let z = normal_cdf((1.0 - m) / s) - normal_cdf((-1.0 - m) / s);
    let pi_a = (normal_cdf(-m / s) - normal_cdf((-1.0 - m) / s)) / z;
    let pi_b = 1.0 - pi_a;
    let state: Vec<bool> = r.samples.iter().map(|x| *x >= 0.0).collect();
    let (mut n_a, mut n_b, mut ab, mut ba) = (0.0, 0.0, 0.0, 0.0);
    for w in state.windows(2) {
        match (w[0], w[1]) {
            (false, t) => {
                n_a += 1.0;
                ab += t as u8 as f64;
            }
            (true, t) => {
                n_b += 1.0;
                ba += (!t) as u8 as f64;
            }
        }
    }
    let (p_ab, p_ba) = (ab / n_a, ba / n_b);
    let lhs = pi_a * p_ab;
    let rhs = pi_b * p_ba;
    // Autocorrelation inflates the binomial error; use the integrated time
    // of the state indicator.
    let ind: Vec<f64> = state.iter().map(|b| *b as u8 as f64).collect();
    let tau = autocorr_time(&ind, 1).unwrap().max;
    let se = ((pi_a * pi_a * p_ab * (1.0 - p_ab) / n_a + pi_b * pi_b * p_ba * (1.0 - p_ba) / n_b)
        * tau)
        .sqrt();
    assert!((lhs - rhs).abs() < 3.0 * se, "{lhs} vs {rhs}, se {se}");
    assert!((n_a / (n_a + n_b) - pi_a).abs() < 0.02);
}

#[test]
fn zero_scale_chain_is_stuck_and_flagged() {
    let cfg = ChainConfig {
        initial_scale: vec![0.0; 2],
        ..ChainConfig::new(2, 500, 100, 1)
    };
    let r = mh_chain_on(|x| x[0] * x[0] + x[1] * x[1], &[0.3, 0.1], &cfg).unwrap();
    assert_eq!(r.acceptance_rate, 1.0);
    assert!(r.samples.chunks(2).all(|s| s == [0.3, 0.1]));
    assert_eq!(r.warnings.len(), 2);
}

#[test]
fn chain_contracts() {
    let ok = ChainConfig::new(2, 10, 5, 0);
    assert!(mh_chain_on(|_| 0.0, &[1.5, 0.0], &ok).is_err());
    assert!(mh_chain_on(|_| 0.0, &[0.0, 0.0], &ChainConfig::new(2, 5, 5, 0)).is_err());
    assert!(mh_chain_on(|_| 0.0, &[0.0], &ok).is_err());
    assert!(mh_chain_on(|_| f64::INFINITY, &[0.0, 0.0], &ok).is_err());
    let a = mh_chain_on(|x| x[0] * x[0] * 50.0, &[0.1, 0.0], &ok).unwrap();
    let b = mh_chain_on(|x| x[0] * x[0] * 50.0, &[0.1, 0.0], &ok).unwrap();
    assert_eq!(a, b);
}

fn desk_response() -> ResponseModel {
    ResponseModel::new(EnergyGrid::new(64).unwrap(), ResponseDescriptor::default()).unwrap()
}

#[test]
fn physical_chain_and_fit_move_toward_truth() {
    let r = desk_response();
    let prior = PriorBox::default();
    let truth = PhysParams {
        kt: 1.1,
        norm: 800.0,
        gamma: 2.2,
        fsc: 0.2,
        nh: 1.5,
    };
    let spec = forward_model(&truth, &r, true, 4).unwrap();
    let (u, _) = params_to_unit(&truth.to_array(), &prior);
    let mut target = spectrum_target(&spec, &r, &prior);
    let at_truth = target(&u);
    let red = reduced_pgstat(at_truth, 64, 5).unwrap();
    assert!(red > 0.4 && red < 2.0, "reduced PGStat at truth {red}");

    let start = [0.0; 5];
    let fit = greedy_fit(
        spectrum_target(&spec, &r, &prior),
        &start,
        GREEDY_STEPS,
        0.1,
        1,
    )
    .unwrap();
    assert_eq!(fit.evaluations, GREEDY_STEPS + 1);
    assert!(fit.stat < target(&start));

    let cfg = ChainConfig::new(5, 3000, 1000, 2);
    let chain = mh_chain(&spec, &r, &prior, &u, &cfg).unwrap();
    assert_eq!(chain.len(), 2000);
    assert!(
        chain.acceptance_rate > 0.05 && chain.acceptance_rate < 0.6,
        "{}",
        chain.acceptance_rate
    );
    let mut sorted = chain.stats.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    assert!(
        median < at_truth + 30.0,
        "median chain statistic {median}, truth {at_truth}"
    );

    let mut buf = Vec::new();
    write_chain_csv(&mut buf, &chain, &prior).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CHAIN_CSV_HEADER);
    assert_eq!(lines.len(), 2001);
    assert!(lines[1].starts_with("1000,"));
    let kt: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!(prior.bounds[0].min <= kt && kt <= prior.bounds[0].max);

    let short = Spectrum {
        counts: vec![1.0; 10],
        ..spec.clone()
    };
    assert!(mh_chain(&short, &r, &prior, &u, &cfg).is_err());
}
