use proptest::prelude::*;

use fspnet::dataset::*;
use fspnet::physics::{forward_model, EnergyGrid, PhysParams, ResponseDescriptor, ResponseModel};

fn small_config(n: usize) -> GenerateConfig {
    GenerateConfig {
        n,
        n_bins: 32,
        seed: 7,
        ..GenerateConfig::default()
    }
}

#[test]
fn prior_draws_stay_in_box_and_repeat() {
    let mut b = PriorBox::default();
    b.bounds[2] = Bound::linear(2.0, 2.0 + 1e-9);
    let draws = sample_prior(&b, 2000, 3);
    assert!(draws.iter().all(|p| b.contains(p)));
    assert_eq!(draws, sample_prior(&b, 2000, 3));
    assert_ne!(draws, sample_prior(&b, 2000, 4));
}

#[test]
fn log_uniform_median() {
    let n = 100_000;
    let mut v: Vec<f64> = sample_prior(&PriorBox::default(), n, 11)
        .iter()
        .map(|p| p[1].ln())
        .collect();
    v.sort_by(f64::total_cmp);
    let median = 0.5 * (v[n / 2 - 1] + v[n / 2]);
    // ln N is uniform on [ln 10, ln 1e5]: density 1/ln(1e4) at the median.
    let se = 0.5 * 1e4f64.ln() / (n as f64).sqrt();
    assert!((median - 1e3f64.ln()).abs() < 3.0 * se, "{}", median.exp());
}

#[test]
fn unit_map_endpoints_and_midpoint() {
    let b = PriorBox::default();
    let lo: [f64; 5] = std::array::from_fn(|i| b.bounds[i].min);
    let hi: [f64; 5] = std::array::from_fn(|i| b.bounds[i].max);
    assert_eq!(params_to_unit(&lo, &b).0, [-1.0; 5]);
    assert_eq!(params_to_unit(&hi, &b).0, [1.0; 5]);
    assert_eq!(unit_to_params(&[-1.0; 5], &b), lo);
    assert_eq!(unit_to_params(&[1.0; 5], &b), hi);
    let mid = [1.3, 1000.0, 2.4, 10f64.powf(-1.5), 10f64.powf(-0.5)];
    let (u, clamped) = params_to_unit(&mid, &b);
    assert_eq!(clamped, 0);
    assert!(u.iter().all(|v| v.abs() < 1e-12), "{u:?}");
    let (u, clamped) = params_to_unit(&[5.0, 1e6, 2.0, 0.5, 0.001], &b);
    assert_eq!(clamped, 3);
    assert_eq!((u[0], u[1], u[4]), (1.0, 1.0, -1.0));
}

#[test]
fn preprocessing_rules() {
    let norm = Normalization {
        mean: 2.0,
        std: 1.0,
        reference_exposure: 100.0,
    };
    let (x, _) = preprocess(&[100.0; 4], &[10.0; 4], 100.0, &norm);
    assert_eq!(x, vec![0.0; 4]);
    let (x, s) = preprocess(&[0.0, 5.0], &[1.0, 1.0], 100.0, &norm);
    assert_eq!(x[0], -1.0 - 2.0);
    assert!(x.iter().chain(&s).all(|v| v.is_finite()));
    // Same rate at half the exposure gives the same input.
    let (a, _) = preprocess(&[40.0, 900.0], &[1.0, 1.0], 100.0, &norm);
    let (b, _) = preprocess(&[20.0, 450.0], &[1.0, 1.0], 50.0, &norm);
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-14);
    }
    let norm = Normalization {
        mean: 3.1,
        std: 0.7,
        reference_exposure: 100.0,
    };
    let counts = [0.3, 3.0, 1e4, 7.7e7];
    let (x, _) = preprocess(&counts, &[1.0; 4], 250.0, &norm);
    for (c, back) in counts.iter().zip(unpreprocess(&x, 250.0, &norm)) {
        assert!((back / c - 1.0).abs() < 1e-10);
    }
}

#[test]
fn uncertainty_propagates_through_the_log() {
    let norm = Normalization {
        mean: 1.0,
        std: 2.0,
        reference_exposure: 100.0,
    };
    let (c, u) = (500.0, 22.0);
    let (_, s) = preprocess(&[c], &[u], 100.0, &norm);
    let h = 1e-3;
    let slope = (preprocess(&[c + h], &[u], 100.0, &norm).0[0]
        - preprocess(&[c - h], &[u], 100.0, &norm).0[0])
        / (2.0 * h);
    assert!((s[0] - slope * u).abs() < 1e-9);
}

#[test]
fn single_row_matches_direct_forward_model() {
    let cfg = GenerateConfig {
        noisy: true,
        ..small_config(1)
    };
    let ds = generate_dataset(&cfg).unwrap();
    let r =
        ResponseModel::new(EnergyGrid::new(32).unwrap(), ResponseDescriptor::default()).unwrap();
    let p = sample_prior(&cfg.prior, 1, cfg.seed)[0];
    let s = forward_model(&PhysParams::from_slice(&p), &r, true, mix(cfg.seed, 0)).unwrap();
    assert_eq!(ds.params[0], p);
    let want: Vec<f32> = s.counts.iter().map(|&c| c as f32).collect();
    assert_eq!(ds.row_counts(0), &want[..]);
}

#[test]
fn parallel_generation_is_bit_identical() {
    for noisy in [false, true] {
        let serial = generate_dataset(&GenerateConfig {
            noisy,
            ..small_config(37)
        })
        .unwrap();
        for workers in [2, 3, 8, 64] {
            let par = generate_dataset(&GenerateConfig {
                noisy,
                workers,
                ..small_config(37)
            })
            .unwrap();
            assert_eq!(to_bytes(&par), to_bytes(&serial));
        }
    }
}

#[test]
fn variable_exposure_rows() {
    let cfg = GenerateConfig {
        exposure: ExposurePolicy::Uniform {
            min: 50.0,
            max: 500.0,
        },
        ..small_config(20)
    };
    let ds = generate_dataset(&cfg).unwrap();
    let e = ds.exposures.as_ref().unwrap();
    assert!(e.iter().all(|v| (50.0..=500.0).contains(v)));
    let b = to_bytes(&ds);
    assert_eq!(b.len(), encoded_len(20, 32, 6, true));
    assert_eq!(from_bytes(&b).unwrap(), ds);
}

#[test]
fn split_partitions_rows() {
    let ds = generate_dataset(&small_config(10)).unwrap();
    let (train, val) = split(&ds, 0.8, 1).unwrap();
    assert_eq!((train.len(), val.len()), (8, 2));
    let mut all: Vec<[f64; 5]> = train.params.iter().chain(&val.params).copied().collect();
    let mut orig = ds.params.clone();
    let key = |p: &[f64; 5]| p.map(f64::to_bits);
    all.sort_by_key(key);
    orig.sort_by_key(key);
    assert_eq!(all, orig);
    let (t2, v2) = split(&ds, 0.8, 1).unwrap();
    assert_eq!((t2, v2), (train.clone(), val.clone()));
    assert_eq!(val.norm, train.norm);
    assert_eq!(train.norm, train.compute_normalization());
    let b = val.normalized(&PriorBox::default());
    assert!(b
        .x
        .iter()
        .chain(&b.sigma)
        .chain(&b.theta)
        .all(|v| v.is_finite()));
    assert!(split(&ds, 1.0, 1).is_err());
    assert!(split(&ds, 0.99, 1).is_err());
}

#[test]
fn format_round_trip_and_errors() {
    let ds = generate_dataset(&GenerateConfig {
        noisy: true,
        ..small_config(12)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.fspn");
    save(&ds, &path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back, ds);
    let path2 = dir.path().join("e.fspn");
    save(&back, &path2).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&path2).unwrap()
    );

    let bytes = to_bytes(&ds);
    assert_eq!(bytes.len(), encoded_len(12, 32, 6, false));
    let mut bad = bytes.clone();
    bad[1] = b'X';
    assert!(matches!(from_bytes(&bad), Err(DatasetError::BadMagic)));
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert!(matches!(
        from_bytes(&bad),
        Err(DatasetError::UnsupportedVersion(2))
    ));
    for cut in [0, 3, 30, header_len(6), bytes.len() - 1] {
        assert!(from_bytes(&bytes[..cut]).is_err());
    }
    assert!(matches!(
        from_bytes(&bytes[..bytes.len() - 1]),
        Err(DatasetError::Truncated { .. })
    ));
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0; 3]);
    assert!(matches!(
        from_bytes(&extra),
        Err(DatasetError::TrailingBytes(3))
    ));
}

#[test]
fn full_scale_file_size() {
    let header = 4 + 4 + 8 + 8 + 1 + 1 + 8 + 6 * 16 + 5 * 8;
    assert_eq!(
        encoded_len(100_000, 240, 6, false),
        header + 2 * 100_000 * 240 * 4 + 100_000 * 5 * 8
    );
    let ds = generate_dataset(&GenerateConfig {
        n_bins: 240,
        ..small_config(3)
    })
    .unwrap();
    assert_eq!(to_bytes(&ds).len(), header + 2 * 3 * 240 * 4 + 3 * 5 * 8);
}

#[test]
fn csv_export() {
    let ds = generate_dataset(&small_config(3)).unwrap();
    let mut buf = Vec::new();
    write_params_csv(&mut buf, &ds.params).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("kT,N,gamma,fsc,nH\n"));
    assert_eq!(text.lines().count(), 4);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.csv");
    ds.write_params_csv(&p).unwrap();
    assert_eq!(read_params_csv(&p).unwrap(), ds.params);
}

proptest! {
    #[test]
    fn unit_round_trip(u in proptest::array::uniform5(-1.0f64..1.0)) {
        let b = PriorBox::default();
        let p = unit_to_params(&u, &b);
        prop_assert!(b.contains(&p));
        let (back, c) = params_to_unit(&p, &b);
        prop_assert_eq!(c, 0);
        let again = unit_to_params(&back, &b);
        for i in 0..5 {
            prop_assert!((again[i] - p[i]).abs() <= 1e-12 * p[i].abs());
        }
    }

    #[test]
    fn unit_map_is_strictly_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, k in 0usize..5) {
        prop_assume!(a != b);
        let bx = PriorBox::default();
        let bd = bx.bounds[k];
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let v = |t: f64| bd.min + t * (bd.max - bd.min);
        prop_assume!(v(lo) < v(hi));
        prop_assert!(bd.to_unit(v(lo)).0 < bd.to_unit(v(hi)).0);
    }

    #[test]
    fn parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        let _ = from_bytes(&bytes);
        let mut framed = b"FSPN\x01\x00\x00\x00".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = from_bytes(&framed);
    }
}
