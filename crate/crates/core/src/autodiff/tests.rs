use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::*;
use crate::gradcheck::{grad_check, GradCheckConfig};
use crate::optim::ParamStore;
use crate::rng::{rng_from, Rng};

fn rand_tensor<S: Scalar>(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64(rng.gen_range(-scale..scale))).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Weighted sum `sum(out * r)` with a fixed random `r`, giving every output a
/// distinct upstream gradient. `r` is scaled so the loss stays O(1).
fn weighted_sum<S: Scalar>(tape: &mut Tape<S>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = rng_from(seed);
    let n = tape.value(out).len() as f64;
    let r = rand_tensor(&mut rng, tape.shape(out), 1.0 / libm::sqrt(n));
    let r = tape.constant(r);
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

#[test]
fn conv_identity_kernel_is_identity() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[1, 3, 3], 1.0));
    let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
}

#[test]
fn conv_identity_is_exact_on_random_input() {
    let mut rng = rng_from(3);
    let input: Tensor<f32> = rand_tensor(&mut rng, &[2, 4, 5, 6], 10.0);
    let mut eye = Tensor::zeros(&[4, 4, 1, 1]);
    for c in 0..4 {
        eye.data_mut()[c * 4 + c] = 1.0;
    }
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(eye);
    let b = tape.constant(Tensor::zeros(&[4]));
    let y = tape.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y), &input);
}

#[test]
fn conv_summing_kernel() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 1]);
    assert_eq!(tape.value(y).data(), &[10.0]);
}

#[test]
fn conv_output_geometry() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[3, 224, 224]));
    let w = tape.constant(Tensor::zeros(&[64, 3, 11, 11]));
    let b = tape.constant(Tensor::zeros(&[64]));
    let y = tape.conv2d(x, w, b, 4, 2).unwrap();
    assert_eq!(tape.shape(y), &[64, 55, 55]);
}

#[test]
fn conv_rejects_mismatches_naming_the_dimension() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[2, 5, 5]));
    let w = tape.constant(Tensor::zeros(&[4, 3, 3, 3]));
    let b = tape.constant(Tensor::zeros(&[4]));
    let err = tape.conv2d(x, w, b, 1, 0).unwrap_err();
    assert!(alloc::format!("{err}").contains("input channels"), "{err}");

    let w = tape.constant(Tensor::zeros(&[4, 2, 7, 7]));
    let err = tape.conv2d(x, w, b, 1, 0).unwrap_err();
    assert!(alloc::format!("{err}").contains("height"), "{err}");

    let w = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
    let bad_b = tape.constant(Tensor::zeros(&[3]));
    assert!(tape.conv2d(x, w, bad_b, 1, 0).is_err());
    assert!(tape.conv2d(x, w, b, 0, 0).is_err());
}

#[test]
fn conv_gradients_match_finite_differences_f32() {
    let mut rng = rng_from(11);
    let mut store = ParamStore::<f32>::new();
    store.insert("x", rand_tensor(&mut rng, &[2, 5, 5], 1.0));
    store.insert("w", rand_tensor(&mut rng, &[3, 2, 3, 3], 0.5));
    store.insert("b", rand_tensor(&mut rng, &[3], 0.5));
    let report = grad_check(
        &store,
        |tape, ps| {
            let (x, w, b) = (ps.bind(tape, "x")?, ps.bind(tape, "w")?, ps.bind(tape, "b")?);
            let y = tape.conv2d(x, w, b, 2, 1)?;
            weighted_sum(tape, y, 99)
        },
        &GradCheckConfig::with_tolerance(1e-3),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn batched_conv_equals_per_sample_conv() {
    let mut rng = rng_from(5);
    let x: Tensor<f64> = rand_tensor(&mut rng, &[3, 2, 6, 7], 1.0);
    let w: Tensor<f64> = rand_tensor(&mut rng, &[4, 2, 3, 3], 1.0);
    let b: Tensor<f64> = rand_tensor(&mut rng, &[4], 1.0);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.conv2d(xv, wv, bv, 2, 1).unwrap();
    for n in 0..3 {
        let xi = tape.constant(x.index0(n));
        let yi = tape.conv2d(xi, wv, bv, 2, 1).unwrap();
        assert_eq!(&tape.value(y).index0(n), tape.value(yi));
    }
}

#[test]
fn pointwise_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap());
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = tape.constant(Tensor::scalar(0.0));
    let s = tape.sigmoid(z);
    let t = tape.tanh(z);
    assert_eq!(tape.value(s).item(), 0.5);
    assert_eq!(tape.value(t).item(), 0.0);
}

#[test]
fn pointwise_kind_parsing() {
    assert_eq!("relu".parse::<PointwiseKind>().unwrap(), PointwiseKind::Relu);
    assert_eq!(
        "maxpool:3:2".parse::<PointwiseKind>().unwrap(),
        PointwiseKind::MaxPool { k: 3, stride: 2 }
    );
    assert!("gelu".parse::<PointwiseKind>().is_err());
    assert!("maxpool:3".parse::<PointwiseKind>().is_err());
}

#[test]
fn maxpool_forward_and_backward_route_to_argmax() {
    let mut store = ParamStore::<f64>::new();
    store.insert("x", Tensor::from_f64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let mut tape = Tape::new();
    let x = store.bind(&mut tape, "x").unwrap();
    let y = tape.pointwise_and_pool(x, PointwiseKind::MaxPool { k: 2, stride: 2 }).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);
    let g = tape.constant(Tensor::from_f64(&[1, 1, 1], &[2.5]).unwrap());
    let prod = tape.mul(y, g).unwrap();
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.params()["x"].data(), &[0.0, 0.0, 0.0, 2.5]);
}

/// Brute-force pooling: enumerate every window, take the first maximum.
fn brute_pool(x: &[f64], h: usize, w: usize, k: usize, s: usize) -> (Vec<f64>, Vec<usize>) {
    let (mut vals, mut idx) = (vec![], vec![]);
    let mut oy = 0;
    while oy + k <= h {
        let mut ox = 0;
        while ox + k <= w {
            let window: Vec<usize> = (0..k * k).map(|j| (oy + j / k) * w + ox + j % k).collect();
            let best = window
                .iter()
                .copied()
                .fold(window[0], |b, i| if x[i] > x[b] { i } else { b });
            vals.push(x[best]);
            idx.push(best);
            ox += s;
        }
        oy += s;
    }
    (vals, idx)
}

#[test]
fn maxpool_matches_window_enumeration_with_ties() {
    let mut rng = rng_from(21);
    for _ in 0..50 {
        let (h, w) = (rng.gen_range(3..9), rng.gen_range(3..9));
        let k = rng.gen_range(1..=h.min(w).min(3));
        let s = rng.gen_range(1..=2);
        // small integer range forces ties
        let data: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0..3) as f64).collect();
        let mut store = ParamStore::<f64>::new();
        store.insert("x", Tensor::from_f64(&[1, h, w], &data).unwrap());
        let mut tape = Tape::new();
        let x = store.bind(&mut tape, "x").unwrap();
        let y = tape.max_pool(x, k, s).unwrap();
        let (vals, idx) = brute_pool(&data, h, w, k, s);
        assert_eq!(tape.value(y).data(), vals.as_slice());
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        let mut expect = vec![0.0; h * w];
        for i in idx {
            expect[i] += 1.0;
        }
        assert_eq!(grads.params()["x"].data(), expect.as_slice());
    }
}

#[test]
fn maxpool_rejects_oversized_window() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 2]));
    assert!(tape.max_pool(x, 3, 1).is_err());
}

#[test]
fn linear_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(&[2], &[3.0, 7.0]).unwrap());
    let eye = tape.constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
    let zero = tape.constant(Tensor::zeros(&[2]));
    let y = tape.linear(x, eye, zero).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 7.0]);

    let x = tape.constant(Tensor::from_f64(&[2], &[2.0, 3.0]).unwrap());
    let w = tape.constant(Tensor::from_f64(&[2, 2], &[1.0, 1.0, 1.0, -1.0]).unwrap());
    let b = tape.constant(Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap());
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0, 0.0]);

    let w3 = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(tape.linear(x, w3, b).is_err());
}

#[test]
fn linear_gradients_match_finite_differences() {
    let mut rng = rng_from(8);
    let mut store = ParamStore::<f32>::new();
    store.insert("x", rand_tensor(&mut rng, &[8], 1.0));
    store.insert("w", rand_tensor(&mut rng, &[5, 8], 0.5));
    store.insert("b", rand_tensor(&mut rng, &[5], 0.5));
    let report = grad_check(
        &store,
        |tape, ps| {
            let (x, w, b) = (ps.bind(tape, "x")?, ps.bind(tape, "w")?, ps.bind(tape, "b")?);
            let y = tape.linear(x, w, b)?;
            weighted_sum(tape, y, 4)
        },
        &GradCheckConfig::with_tolerance(1e-3),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn softmax_cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::full(&[5], 0.3));
    let l = tape.softmax_cross_entropy(z, 2).unwrap();
    assert!((tape.value(l).item() - 5f64.ln()).abs() < 1e-12);
    assert!((tape.value(l).item() - 1.6094).abs() < 1e-4);

    let z = tape.constant(Tensor::from_f64(&[2], &[20.0, -20.0]).unwrap());
    let l = tape.softmax_cross_entropy(z, 0).unwrap();
    assert!(tape.value(l).item() < 1e-8);

    assert_eq!(
        tape.softmax_cross_entropy(z, 2).unwrap_err(),
        Error::LabelOutOfRange { label: 2, classes: 2 }
    );
}

#[test]
fn softmax_and_ce_gradient_sums() {
    let mut rng = rng_from(13);
    for _ in 0..100 {
        let k = rng.gen_range(2..8);
        let z: Vec<f64> = (0..k).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let p = softmax(&z);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mut store = ParamStore::<f64>::new();
        store.insert("z", Tensor::from_f64(&[k], &z).unwrap());
        let mut tape = Tape::new();
        let zv = store.bind(&mut tape, "z").unwrap();
        let label = rng.gen_range(0..k);
        let l = tape.softmax_cross_entropy(zv, label).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.params()["z"].sum().abs() < 1e-7);
    }
}

#[test]
fn softmax_cross_entropy_gradient_check() {
    let mut rng = rng_from(17);
    let mut store = ParamStore::<f32>::new();
    store.insert("z", rand_tensor(&mut rng, &[5], 2.0));
    let report = grad_check(
        &store,
        |tape, ps| {
            let z = ps.bind(tape, "z")?;
            tape.softmax_cross_entropy(z, 3)
        },
        &GradCheckConfig::with_tolerance(1e-3),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn structural_ops_gradient_check() {
    let mut rng = rng_from(23);
    let mut store = ParamStore::<f64>::new();
    store.insert("a", rand_tensor(&mut rng, &[3, 2, 4, 4], 1.0));
    store.insert("b", rand_tensor(&mut rng, &[3, 1, 4, 4], 1.0));
    let report = grad_check(
        &store,
        |tape, ps| {
            let (a, b) = (ps.bind(tape, "a")?, ps.bind(tape, "b")?);
            let c = tape.concat(&[a, b], 1)?;
            let n = tape.narrow(c, 1, 2)?;
            let s = tape.select(n, 1)?;
            let g = tape.global_avg_pool(s)?;
            let t = tape.tanh(g);
            let u = tape.sigmoid(t);
            let first = tape.select(c, 0)?;
            let p = tape.global_avg_pool(first)?;
            let v = tape.add(u, p)?;
            let w = tape.mul(v, v)?;
            Ok(tape.sum(w))
        },
        &GradCheckConfig::with_tolerance(1e-6),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn concat_and_select_values() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::from_f64(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = tape.constant(Tensor::from_f64(&[2, 1, 2], &[5.0, 6.0, 7.0, 8.0]).unwrap());
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.shape(c), &[2, 2, 2]);
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    let s = tape.select(c, 1).unwrap();
    assert_eq!(tape.value(s).data(), &[3.0, 4.0, 7.0, 8.0]);
    assert!(tape.select(c, 2).is_err());
    assert!(tape.narrow(c, 1, 2).is_err());
}

/// Randomized gradient checks for every operator at both precisions.
#[test]
fn randomized_operator_gradients_f64() {
    operator_trials::<f64>(100, 1e-6, 1000);
}

#[test]
fn randomized_operator_gradients_f32() {
    operator_trials::<f32>(100, 1e-3, 2000);
}

fn operator_trials<S: Scalar>(trials: u64, tol: f64, seed: u64) {
    for trial in 0..trials {
        for o in crate::gradcheck::trials::operator_trial::<S>(seed + trial).unwrap() {
            assert!(o.max_rel_error < tol, "trial {trial}: {o:?}");
        }
    }
}
