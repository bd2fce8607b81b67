use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fspnet::autodiff::gradcheck::{check_inputs, check_params};
use fspnet::autodiff::nn::{self, bigru, Conv1d, Dense, Gru};
use fspnet::autodiff::optim::{AdamW, EarlyStopping, PlateauScheduler};
use fspnet::autodiff::*;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[test]
fn square_gradient_is_two_x() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::scalar(3.0));
    let y = tape.square(x);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap(), &[6.0]);
}

#[test]
fn constant_output_has_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::scalar(3.0));
    let c = tape.constant(Tensor::scalar(7.0));
    let g = tape.backward(c).unwrap();
    assert_eq!(g.get_or_zeros(&tape, x), vec![0.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::row(&[1.0, 2.0]));
    let y = tape.square(x);
    assert!(matches!(tape.backward(y), Err(AutodiffError::NotScalar(_))));
}

#[test]
fn nan_is_propagated_and_counted() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::row(&[-1.0, 2.0]));
    let y = tape.ln(x);
    let s = tape.sum(y);
    assert!(tape.value(s).item().is_nan());
    let g = tape.backward(s).unwrap();
    assert_eq!(g.diagnostics.non_finite_values, 2);
}

#[test]
fn gradients_accumulate_until_zeroed() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::scalar(2.0)).unwrap();
    for _ in 0..2 {
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let y = tape.square(w);
        let g = tape.backward(y).unwrap();
        store.accumulate(&tape, &g).unwrap();
    }
    assert_eq!(store.entry("w").unwrap().grad, vec![8.0]);
    store.zero_grad();
    assert_eq!(store.entry("w").unwrap().grad, vec![0.0]);
}

#[test]
fn three_layer_gelu_net_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    nn::init_dense(&mut store, "l0", 10, 16, &mut rng).unwrap();
    nn::init_dense(&mut store, "l1", 16, 16, &mut rng).unwrap();
    nn::init_dense(&mut store, "l2", 16, 1, &mut rng).unwrap();
    let x = random(&[4, 10], &mut rng);
    let net = |tape: &mut Tape, s: &ParamStore, x: Var| -> Result<Var, AutodiffError> {
        let mut h = x;
        for (i, name) in ["l0", "l1", "l2"].iter().enumerate() {
            h = Dense::bind(tape, s, name)?.forward(tape, h)?;
            if i < 2 {
                h = tape.gelu(h);
            }
        }
        Ok(tape.sum(h))
    };
    let r = check_params(&store, "", usize::MAX, |tape, s| {
        let xv = tape.constant(x.clone());
        net(tape, s, xv)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
    let r = check_inputs(&[x.clone()], usize::MAX, |tape, v| net(tape, &store, v[0])).unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn dense_identity_and_zero_input() {
    let mut store = ParamStore::new();
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 4] = 1.0;
    }
    store.insert("d.weight", eye).unwrap();
    store.insert("d.bias", Tensor::zeros(&[3])).unwrap();
    let mut tape = Tape::new();
    let d = Dense::bind(&mut tape, &store, "d").unwrap();
    let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.25, 0.0, -1.0]]).unwrap();
    let xv = tape.constant(x.clone());
    let y = d.forward(&mut tape, xv).unwrap();
    assert_eq!(tape.value(y), &x);

    store
        .set_value(
            "d.bias",
            Tensor::row(&[0.5, -1.0, 2.0]).reshaped(&[3]).unwrap(),
        )
        .unwrap();
    let mut tape = Tape::new();
    let d = Dense::bind(&mut tape, &store, "d").unwrap();
    let zv = tape.constant(Tensor::zeros(&[2, 3]));
    let y = d.forward(&mut tape, zv).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
}

#[test]
fn dense_matches_hand_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (x, w, b) = (
        random(&[2, 3], &mut rng),
        random(&[4, 3], &mut rng),
        random(&[4], &mut rng),
    );
    let mut tape = Tape::new();
    let (xv, wv, bv) = (
        tape.constant(x.clone()),
        tape.constant(w.clone()),
        tape.constant(b.clone()),
    );
    let d = Dense {
        weight: wv,
        bias: bv,
    };
    let y = d.forward(&mut tape, xv).unwrap();
    assert_eq!(tape.shape(y), &[2, 4]);
    for r in 0..2 {
        for o in 0..4 {
            let mut acc = b.data()[o];
            for i in 0..3 {
                acc += x.data()[r * 3 + i] * w.data()[o * 3 + i];
            }
            assert!((tape.value(y).data()[r * 4 + o] - acc).abs() < 1e-14);
        }
    }
}

#[test]
fn dense_rejects_mismatched_shapes() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    let w = tape.constant(Tensor::zeros(&[4, 5]));
    assert!(tape.matmul_t(x, w).is_err());
}

fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
    let (batch, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let (pad, lout) = conv_padding(len, k, stride);
    let mut out = Tensor::zeros(&[batch, cout, lout]);
    for n in 0..batch {
        for o in 0..cout {
            for t in 0..lout {
                let mut acc = b.data()[o];
                for c in 0..cin {
                    for j in 0..k {
                        let pos = (t * stride + j) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += w.data()[(o * cin + c) * k + j]
                                * x.data()[(n * cin + c) * len + pos as usize];
                        }
                    }
                }
                out.data_mut()[(n * cout + o) * lout + t] = acc;
            }
        }
    }
    out
}

fn conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor, AutodiffError> {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (
        tape.constant(x.clone()),
        tape.constant(w.clone()),
        tape.constant(b.clone()),
    );
    let y = tape.conv1d(xv, wv, bv, stride)?;
    Ok(tape.value(y).clone())
}

#[test]
fn conv_identity_kernel_and_averaging() {
    let x = Tensor::new(&[1, 1, 6], vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]).unwrap();
    let y = conv(
        &x,
        &Tensor::new(&[1, 1, 1], vec![1.0]).unwrap(),
        &Tensor::zeros(&[1]),
        1,
    )
    .unwrap();
    assert_eq!(y, x);
    let c = Tensor::filled(&[1, 1, 9], 2.5);
    let y = conv(
        &c,
        &Tensor::filled(&[1, 1, 3], 1.0 / 3.0),
        &Tensor::zeros(&[1]),
        1,
    )
    .unwrap();
    for &v in &y.data()[1..8] {
        assert!((v - 2.5).abs() < 1e-14);
    }
}

#[test]
fn conv_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (len, k, stride) in [(17, 5, 2), (16, 5, 2), (9, 3, 1), (12, 4, 3), (5, 5, 2)] {
        let x = random(&[2, 3, len], &mut rng);
        let w = random(&[4, 3, k], &mut rng);
        let b = random(&[4], &mut rng);
        let y = conv(&x, &w, &b, stride).unwrap();
        let want = naive_conv(&x, &w, &b, stride);
        assert_eq!(y.shape(), want.shape());
        assert_eq!(y.shape()[2], len.div_ceil(stride));
        for (a, e) in y.data().iter().zip(want.data()) {
            assert!((a - e).abs() < 1e-13);
        }
    }
}

#[test]
fn conv_contract_violations() {
    let x = Tensor::zeros(&[1, 1, 4]);
    let w = Tensor::zeros(&[1, 1, 3]);
    assert!(matches!(
        conv(&x, &w, &Tensor::zeros(&[1]), 0),
        Err(AutodiffError::Contract(_))
    ));
    let short = Tensor::zeros(&[1, 1, 2]);
    assert!(conv(&short, &w, &Tensor::zeros(&[1]), 1).is_err());
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = [
        random(&[2, 2, 11], &mut rng),
        random(&[3, 2, 5], &mut rng),
        random(&[3], &mut rng),
    ];
    let r = check_inputs(&inputs, usize::MAX, |tape, v| {
        let y = tape.conv1d(v[0], v[1], v[2], 2)?;
        let y = tape.gelu(y);
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn gelu_values_and_slope() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::row(&[0.0, 10.0, 0.5, -1.3]));
    let y = tape.gelu(x);
    let v = tape.value(y).data().to_vec();
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 10.0).abs() < 1e-8);
    assert!((v[2] - 0.5 * phi(0.5)).abs() < 1e-15);
    assert!((v[3] + 1.3 * phi(-1.3)).abs() < 1e-15);

    let mut tape = Tape::new();
    let x = tape.variable(Tensor::scalar(0.5));
    let y = tape.gelu(x);
    let g = tape.backward(y).unwrap().get(x).unwrap()[0];
    let h = 1e-6;
    let fd = ((0.5 + h) * phi(0.5 + h) - (0.5 - h) * phi(0.5 - h)) / (2.0 * h);
    assert!((g - fd).abs() < 1e-7, "{g} vs {fd}");
}

fn gru_store(rng: &mut ChaCha8Rng, feat: usize, hidden: usize) -> ParamStore {
    let mut s = ParamStore::new();
    nn::init_gru(&mut s, "f", feat, hidden, rng).unwrap();
    nn::init_gru(&mut s, "b", feat, hidden, rng).unwrap();
    s
}

fn run_bigru(store: &ParamStore, seq: &Tensor) -> Result<Tensor, AutodiffError> {
    let mut tape = Tape::new();
    let f = Gru::bind(&mut tape, store, "f")?;
    let b = Gru::bind(&mut tape, store, "b")?;
    let s = tape.constant(seq.clone());
    let y = bigru(&mut tape, s, &f, &b)?;
    Ok(tape.value(y).clone())
}

/// Scalar GRU recurrence for one sequence in one direction.
fn gru_scalar(store: &ParamStore, name: &str, seq: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let w_ih = store.value(&format!("{name}.w_ih")).unwrap();
    let w_hh = store.value(&format!("{name}.w_hh")).unwrap();
    let b_ih = store.value(&format!("{name}.b_ih")).unwrap().data();
    let b_hh = store.value(&format!("{name}.b_hh")).unwrap().data();
    let hd = w_hh.shape()[1];
    let feat = w_ih.shape()[1];
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let lin = |w: &Tensor, b: &[f64], row: usize, x: &[f64]| {
        let n = w.shape()[1];
        b[row] + (0..n).map(|i| w.data()[row * n + i] * x[i]).sum::<f64>()
    };
    let mut h = vec![0.0; hd];
    let mut out = vec![vec![]; seq.len()];
    let order: Vec<usize> = if reverse {
        (0..seq.len()).rev().collect()
    } else {
        (0..seq.len()).collect()
    };
    for t in order {
        assert_eq!(seq[t].len(), feat);
        let mut next = vec![0.0; hd];
        for j in 0..hd {
            let r = sig(lin(w_ih, b_ih, j, &seq[t]) + lin(w_hh, b_hh, j, &h));
            let z = sig(lin(w_ih, b_ih, hd + j, &seq[t]) + lin(w_hh, b_hh, hd + j, &h));
            let n =
                (lin(w_ih, b_ih, 2 * hd + j, &seq[t]) + r * lin(w_hh, b_hh, 2 * hd + j, &h)).tanh();
            next[j] = (1.0 - z) * n + z * h[j];
        }
        h = next;
        out[t] = h.clone();
    }
    out
}

#[test]
fn bigru_matches_scalar_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (batch, len, feat, hd) = (2, 3, 4, 5);
    let store = gru_store(&mut rng, feat, hd);
    let seq = random(&[batch, len, feat], &mut rng);
    let y = run_bigru(&store, &seq).unwrap();
    assert_eq!(y.shape(), &[batch, len, 2 * hd]);
    for n in 0..batch {
        let rows: Vec<Vec<f64>> = (0..len)
            .map(|t| seq.data()[(n * len + t) * feat..(n * len + t + 1) * feat].to_vec())
            .collect();
        let f = gru_scalar(&store, "f", &rows, false);
        let b = gru_scalar(&store, "b", &rows, true);
        for t in 0..len {
            let got = &y.data()[(n * len + t) * 2 * hd..(n * len + t + 1) * 2 * hd];
            for j in 0..hd {
                assert!((got[j] - f[t][j]).abs() < 1e-14);
                assert!((got[hd + j] - b[t][j]).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn bigru_single_step_and_zero_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = gru_store(&mut rng, 3, 4);
    for dir in ["f", "b"] {
        for p in ["w_ih", "w_hh", "b_ih", "b_hh"] {
            let name = format!("{dir}.{p}");
            let v = store.value(&name).unwrap().clone();
            store.set_value(&format!("b.{p}"), v).ok();
            let _ = name;
        }
    }
    // Backward direction now shares the forward weights: halves agree at len 1.
    let seq = random(&[2, 1, 3], &mut rng);
    let y = run_bigru(&store, &seq).unwrap();
    for n in 0..2 {
        let row = &y.data()[n * 8..(n + 1) * 8];
        assert_eq!(&row[..4], &row[4..]);
    }

    let zeros: Vec<(String, Vec<usize>)> = store
        .iter()
        .map(|(n, e)| (n.to_string(), e.value.shape().to_vec()))
        .collect();
    for (n, s) in zeros {
        store.set_value(&n, Tensor::zeros(&s)).unwrap();
    }
    let y = run_bigru(&store, &random(&[2, 4, 3], &mut rng)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn bigru_rejects_empty_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let store = gru_store(&mut rng, 3, 4);
    assert!(matches!(
        run_bigru(&store, &Tensor::zeros(&[1, 0, 3])),
        Err(AutodiffError::Contract(_))
    ));
}

#[test]
fn bigru_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let store = gru_store(&mut rng, 3, 4);
    let seq = random(&[2, 3, 3], &mut rng);
    let r = check_params(&store, "", usize::MAX, |tape, s| {
        let f = Gru::bind(tape, s, "f")?;
        let b = Gru::bind(tape, s, "b")?;
        let x = tape.constant(seq.clone());
        let y = bigru(tape, x, &f, &b)?;
        let y = tape.square(y);
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn elementwise_and_shape_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[3, 4], &mut rng);
    let row = random(&[4], &mut rng);
    let m = random(&[4, 2], &mut rng);
    let r = check_inputs(&[a, b, row, m], usize::MAX, |t, v| {
        let s = t.sub(v[0], v[1])?;
        let p = t.mul(s, v[0])?;
        let q = t.add_row(p, v[2])?;
        let e = t.exp(q);
        let l = t.add_scalar(e, 1.0);
        let l = t.ln(l);
        let th = t.tanh(l);
        let sg = t.sigmoid(v[1]);
        let c = t.concat_cols(&[th, sg])?;
        let c = t.permute_cols(c, &[7, 0, 6, 1, 5, 2, 4, 3])?;
        let c = t.select_cols(c, 2, 4)?;
        let mm = t.matmul(c, v[3])?;
        let rs = t.row_sum(mm);
        let sq = t.square(rs);
        let sc = t.scale(sq, 0.7);
        let r = t.reshape(sc, &[3])?;
        Ok(t.mean(r))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{r:?}");
}

#[test]
fn row_map_uses_supplied_jacobian() {
    // y = x·p0 + p1², logdet column carries x·p1.
    let x = Tensor::row(&[0.3, -1.2, 2.0]).reshaped(&[3]).unwrap();
    let p = Tensor::new(&[3, 2], vec![1.5, 0.2, -0.7, 1.1, 0.4, -0.9]).unwrap();
    let r = check_inputs(&[x, p], usize::MAX, |t, v| {
        let xs = t.value(v[0]).data().to_vec();
        let ps = t.value(v[1]).data().to_vec();
        let mut out = Vec::new();
        let mut jac = Vec::new();
        for i in 0..3 {
            let (x, p0, p1) = (xs[i], ps[2 * i], ps[2 * i + 1]);
            out.extend([x * p0 + p1 * p1, x * p1]);
            jac.extend([p0, x, 2.0 * p1, p1, 0.0, x]);
        }
        let out = Tensor::new(&[3, 2], out)?;
        assert_eq!(jac.len(), 18);
        let y = t.row_map(v[0], v[1], out, jac)?;
        let y = t.square(y);
        Ok(t.sum(y))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-7, "{r:?}");
}

#[test]
fn adamw_null_step_and_pure_decay() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::row(&[1.0, -2.0])).unwrap();
    store
        .entries_mut()
        .for_each(|(_, e)| e.grad = vec![0.3, -0.1]);
    let before = store.value("w").unwrap().clone();
    AdamW::default().step(&mut store, 0.0);
    assert_eq!(store.value("w").unwrap(), &before);

    let mut store = ParamStore::new();
    store.insert("w", before.clone()).unwrap();
    let lr = 0.1;
    let opt = AdamW {
        weight_decay: 0.5,
        ..AdamW::default()
    };
    opt.step(&mut store, lr);
    let want: Vec<f64> = before.data().iter().map(|v| v * (1.0 - lr * 0.5)).collect();
    assert_eq!(store.value("w").unwrap().data(), &want[..]);
}

#[test]
fn adamw_single_step_hand_calculation() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::scalar(0.5)).unwrap();
    store.entries_mut().for_each(|(_, e)| e.grad = vec![1.0]);
    let lr = 1e-3;
    AdamW::default().step(&mut store, lr);
    // m̂ = 1, v̂ = 1 after bias correction.
    let want = 0.5 * (1.0 - lr * 1e-2) - lr * 1.0 / (1.0 + 1e-8);
    assert!((store.value("w").unwrap().item() - want).abs() < 1e-15);
}

#[test]
fn adamw_skips_non_finite_entries() {
    let mut store = ParamStore::new();
    store.insert("a", Tensor::scalar(1.0)).unwrap();
    store.insert("b", Tensor::scalar(1.0)).unwrap();
    store
        .entries_mut()
        .for_each(|(n, e)| e.grad = vec![if n == "a" { f64::NAN } else { 1.0 }]);
    let r = AdamW::default().step(&mut store, 1e-2);
    assert_eq!(
        r,
        optim::StepReport {
            updated: 1,
            skipped_non_finite: 1
        }
    );
    assert_eq!(store.value("a").unwrap().item(), 1.0);
    assert_eq!(store.entry("a").unwrap().step_count(), 0);
}

fn plain_adam(theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], t: i32, lr: f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    for i in 0..theta.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mh = m[i] / (1.0 - b1.powi(t));
        let vh = v[i] / (1.0 - b2.powi(t));
        theta[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

proptest! {
    #[test]
    fn adamw_without_decay_is_adam(
        init in proptest::collection::vec(-3.0f64..3.0, 1..6),
        grads in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 6), 1..8),
        lr in 1e-4f64..1e-1,
    ) {
        let n = init.len();
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(&[n], init.clone()).unwrap()).unwrap();
        let opt = AdamW { weight_decay: 0.0, ..AdamW::default() };
        let (mut theta, mut m, mut v) = (init.clone(), vec![0.0; n], vec![0.0; n]);
        for (t, g) in grads.iter().enumerate() {
            let g = &g[..n];
            store.entries_mut().for_each(|(_, e)| e.grad = g.to_vec());
            opt.step(&mut store, lr);
            plain_adam(&mut theta, &mut m, &mut v, g, t as i32 + 1, lr);
            prop_assert_eq!(store.value("w").unwrap().data(), &theta[..]);
        }
    }

    #[test]
    fn conv_output_length_is_ceil(len in 5usize..80, stride in 1usize..5, k in 1usize..6) {
        let x = Tensor::zeros(&[1, 1, len]);
        let y = conv(&x, &Tensor::zeros(&[2, 1, k]), &Tensor::zeros(&[2]), stride).unwrap();
        prop_assert_eq!(y.shape()[2], len.div_ceil(stride));
    }

    #[test]
    fn scheduler_lr_stays_in_range(metrics in proptest::collection::vec(-10.0f64..10.0, 1..200)) {
        let mut s = PlateauScheduler::new(1e-3, 1e-6).with_patience(3);
        for m in metrics {
            let lr = s.step(m);
            prop_assert!((1e-6..=1e-3).contains(&lr));
        }
    }
}

#[test]
fn scheduler_never_decays_while_improving() {
    let mut s = PlateauScheduler::new(1e-3, 1e-6);
    for e in 0..100 {
        assert_eq!(s.step(100.0 - e as f64), 1e-3);
    }
}

#[test]
fn scheduler_decays_on_schedule_and_respects_floor() {
    let mut s = PlateauScheduler::new(1e-3, 1e-6).with_patience(5);
    let mut decays = Vec::new();
    let mut last = s.lr();
    for epoch in 0..16 {
        let lr = s.step(1.0);
        if lr < last {
            decays.push(epoch);
        }
        last = lr;
    }
    assert_eq!(decays, vec![5, 10, 15]);

    let mut s = PlateauScheduler::new(1e-3, 1e-6);
    for _ in 0..1000 {
        s.step(1.0);
    }
    assert_eq!(s.lr(), 1e-6);
}

#[test]
fn early_stopping_waits_for_full_window() {
    let mut es = EarlyStopping::new(30, 1e-4);
    assert!(!es.observe(1.0));
    for _ in 0..29 {
        assert!(!es.observe(1.0));
    }
    assert!(es.observe(1.0));
}

fn tiny_model(seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    nn::init_conv1d(&mut s, "enc.conv0", 1, 2, 3, &mut rng).unwrap();
    nn::init_dense(&mut s, "enc.fc", 8, 3, &mut rng).unwrap();
    s
}

fn train_steps(store: &mut ParamStore, steps: usize) {
    let x = Tensor::new(&[1, 1, 8], (0..8).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
    for _ in 0..steps {
        let mut tape = Tape::new();
        let c = Conv1d::bind(&mut tape, store, "enc.conv0", 2).unwrap();
        let d = Dense::bind(&mut tape, store, "enc.fc").unwrap();
        let xv = tape.constant(x.clone());
        let h = c.forward(&mut tape, xv).unwrap();
        let h = tape.gelu(h);
        let h = tape.reshape(h, &[1, 8]).unwrap();
        let y = d.forward(&mut tape, h).unwrap();
        let y = tape.square(y);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        store.zero_grad();
        store.accumulate(&tape, &g).unwrap();
        AdamW::default().step(store, 1e-2);
    }
}

#[test]
fn training_is_bit_deterministic() {
    let mut a = tiny_model(42);
    let mut b = tiny_model(42);
    train_steps(&mut a, 25);
    train_steps(&mut b, 25);
    assert_eq!(a, b);
    assert_eq!(a.checksum(""), b.checksum(""));
    assert_ne!(a.checksum(""), tiny_model(42).checksum(""));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut s = tiny_model(1);
    s.insert(
        "weird.values",
        Tensor::new(&[2, 2], vec![-0.0, f64::MIN_POSITIVE, 1e308, -3.25]).unwrap(),
    )
    .unwrap();
    s.insert("scalar", Tensor::scalar(std::f64::consts::PI))
        .unwrap();
    let bytes = checkpoint::to_bytes(&s);
    assert_eq!(&bytes[..4], b"FSPC");
    let back = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.len(), s.len());
    for (name, e) in s.iter() {
        let b = back.value(name).unwrap();
        assert_eq!(b.shape(), e.value.shape());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(b), bits(&e.value));
    }
    assert_eq!(checkpoint::to_bytes(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fspc");
    checkpoint::save(&s, &path).unwrap();
    assert_eq!(
        checkpoint::to_bytes(&checkpoint::load(&path).unwrap()),
        bytes
    );
}

#[test]
fn checkpoint_rejects_malformed_input() {
    use checkpoint::CheckpointError as E;
    let bytes = checkpoint::to_bytes(&tiny_model(1));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::from_bytes(&bad), Err(E::BadMagic)));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(
        checkpoint::from_bytes(&bad),
        Err(E::UnsupportedVersion(_))
    ));
    for cut in [3, 10, 20, bytes.len() - 1] {
        assert!(checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(
        checkpoint::from_bytes(&extra),
        Err(E::TrailingBytes(_))
    ));
}

#[test]
fn restore_requires_prefix_and_matching_shapes() {
    let ckpt = tiny_model(1);
    let mut model = tiny_model(2);
    let n = checkpoint::restore_into(&mut model, &ckpt, "enc.").unwrap();
    assert_eq!(n, ckpt.len());
    assert_eq!(model.checksum(""), ckpt.checksum(""));
    let mut model = tiny_model(2);
    model.insert("enc.extra", Tensor::scalar(1.0)).unwrap();
    assert!(matches!(
        checkpoint::restore_into(&mut model, &ckpt, "enc."),
        Err(checkpoint::CheckpointError::Missing(n)) if n == "enc.extra"
    ));
    assert!(checkpoint::restore_into(&mut model, &ckpt, "dec.").is_ok());
    let mut wrong = ParamStore::new();
    wrong.insert("enc.fc.bias", Tensor::zeros(&[4])).unwrap();
    assert!(checkpoint::restore_into(&mut wrong, &ckpt, "enc.").is_err());
}

#[test]
fn checkpoint_rejects_overflowing_shapes() {
    let mut b = Vec::new();
    b.extend_from_slice(b"FSPC");
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&1u64.to_le_bytes());
    b.extend_from_slice(&1u64.to_le_bytes());
    b.push(b'w');
    b.extend_from_slice(&3u64.to_le_bytes());
    for d in [u64::MAX, u64::MAX, 0] {
        b.extend_from_slice(&d.to_le_bytes());
    }
    assert!(matches!(
        checkpoint::from_bytes(&b),
        Err(checkpoint::CheckpointError::BadShape(_))
    ));
}

proptest! {
    #[test]
    fn checkpoint_parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = checkpoint::from_bytes(&bytes);
        let mut framed = b"FSPC\x01\x00\x00\x00".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = checkpoint::from_bytes(&framed);
    }
}
