//! Seeded randomized gradient checks over every tape operator and over a
//! miniature two-stream model.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{grad_check, GradCheckConfig};
use crate::autodiff::{PointwiseKind, Tape, Var};
use crate::error::Result;
use crate::model::{build_model, forward, ExtractorSpec, ModelSpec, RecurrentKind, RecurrentSpec};
use crate::optim::ParamStore;
use crate::rng::{derive, rng_from, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Worst relative error seen for one operator or model in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub op: &'static str,
    pub max_rel_error: f64,
    /// Elements compared.
    pub checked: usize,
    /// Elements dropped by the kink guard.
    pub skipped: usize,
}

impl TrialOutcome {
    fn from_report(op: &'static str, r: &super::GradCheckReport) -> Self {
        TrialOutcome { op, max_rel_error: r.max_rel_error(), checked: r.checked(), skipped: r.skipped() }
    }
}

fn rand_tensor<S: Scalar>(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64(rng.gen_range(-scale..scale))).collect();
    Tensor::from_vec(shape, data).expect("non-empty shape")
}

/// Values spaced at least `gap` apart in random order, so max pooling and
/// ReLU never sit within a finite-difference step of a kink.
fn spaced_tensor<S: Scalar>(rng: &mut Rng, shape: &[usize], gap: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.3) * gap).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::from_f64(shape, &vals).expect("non-empty shape")
}

/// `sum(out * r)` with a fixed random `r`, so every output element gets a
/// distinct upstream gradient. `r` is scaled to keep the loss O(1).
fn weighted_sum<S: Scalar>(tape: &mut Tape<S>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = rng_from(seed);
    let n = tape.value(out).len() as f64;
    let r = rand_tensor(&mut rng, tape.shape(out), 1.0 / libm::sqrt(n));
    let r = tape.constant(r);
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

/// One trial over every operator with random shapes and values drawn from
/// `seed`. Elementwise ops without kinks are checked on every element.
pub fn operator_trial<S: Scalar>(seed: u64) -> Result<Vec<TrialOutcome>> {
    let mut rng = rng_from(seed);
    let c_in = rng.gen_range(1..4);
    let c_out = rng.gen_range(1..4);
    let k = rng.gen_range(1..4);
    let stride = rng.gen_range(1..3);
    let pad = rng.gen_range(0..2);
    let h = rng.gen_range(k.max(2)..7);
    let w = rng.gen_range(k.max(2)..7);
    let mut store = ParamStore::<S>::new();
    store.insert("x", spaced_tensor(&mut rng, &[c_in, h, w], 0.05));
    store.insert("w", rand_tensor(&mut rng, &[c_out, c_in, k, k], 0.5));
    store.insert("b", rand_tensor(&mut rng, &[c_out], 0.5));
    store.insert("lw", rand_tensor(&mut rng, &[3, c_in], 0.5));
    store.insert("lb", rand_tensor(&mut rng, &[3], 0.5));
    store.insert("y", rand_tensor(&mut rng, &[c_in, h, w], 1.0));
    let label = rng.gen_range(0..3);
    let rseed = rng.gen::<u64>();
    let cfg = GradCheckConfig::with_tolerance(f64::INFINITY);
    let mut out = Vec::new();

    let r = grad_check(
        &store,
        |tape, ps| {
            let (x, wv, b) = (ps.bind(tape, "x")?, ps.bind(tape, "w")?, ps.bind(tape, "b")?);
            let y = tape.conv2d(x, wv, b, stride, pad)?;
            weighted_sum(tape, y, rseed)
        },
        &cfg,
    )?;
    out.push(TrialOutcome::from_report("conv2d", &r));

    let pool_k = rng.gen_range(1..=h.min(w).min(3));
    for (op, kind) in [
        ("relu", PointwiseKind::Relu),
        ("tanh", PointwiseKind::Tanh),
        ("sigmoid", PointwiseKind::Sigmoid),
        ("max_pool", PointwiseKind::MaxPool { k: pool_k, stride: 1 }),
    ] {
        let r = grad_check(
            &store,
            |tape, ps| {
                let x = ps.bind(tape, "x")?;
                let y = tape.pointwise_and_pool(x, kind)?;
                weighted_sum(tape, y, rseed)
            },
            &cfg,
        )?;
        out.push(TrialOutcome::from_report(op, &r));
    }

    // global pooling, linear and cross-entropy as a classifier head
    let r = grad_check(
        &store,
        |tape, ps| {
            let x = ps.bind(tape, "y")?;
            let g = tape.global_avg_pool(x)?;
            let (lw, lb) = (ps.bind(tape, "lw")?, ps.bind(tape, "lb")?);
            let z = tape.linear(g, lw, lb)?;
            tape.softmax_cross_entropy(z, label)
        },
        &cfg,
    )?;
    out.push(TrialOutcome::from_report("avg_pool+linear+cross_entropy", &r));

    // structural ops
    let axis = rng.gen_range(0..3);
    let lead = if axis == 0 { 2 * c_in } else { c_in };
    let start = lead / 2;
    let r = grad_check(
        &store,
        |tape, ps| {
            let (x, y) = (ps.bind(tape, "x")?, ps.bind(tape, "y")?);
            let c = tape.concat(&[x, y], axis)?;
            let n = tape.narrow(c, start, lead - start)?;
            let s = tape.select(n, lead - start - 1)?;
            let a = tape.add(x, y)?;
            let m = tape.mul(a, y)?;
            let t = weighted_sum(tape, s, rseed)?;
            let u = weighted_sum(tape, m, rseed ^ 1)?;
            let v = tape.add(t, u)?;
            Ok(tape.sum(v))
        },
        &cfg,
    )?;
    out.push(TrialOutcome::from_report("concat+narrow+select+add+mul+sum", &r));
    Ok(out)
}

/// Miniature two-stream model: 8-channel extractor on `3 x 3 x 16 x 16`
/// clips, with a small LSTM or an 8-channel convLSTM head.
pub fn miniature_spec(kind: RecurrentKind, n_classes: usize) -> ModelSpec {
    let recurrent = match kind {
        RecurrentKind::Lstm => RecurrentSpec {
            lstm_reduce: 12,
            lstm_widths: vec![6, 10],
            ..RecurrentSpec::lstm()
        },
        RecurrentKind::ConvLstm => RecurrentSpec::conv_lstm(8),
        RecurrentKind::None => RecurrentSpec::none(),
    };
    ModelSpec {
        extractor: ExtractorSpec::miniature(8),
        recurrent,
        n_classes,
        input: (16, 16),
    }
}

/// Gradient check of the full miniature model: every parameter tensor, up
/// to `elements_per_param` sampled elements each. Random inputs put some
/// ReLU and max-pool inputs near their kinks; `kink_guard` (see
/// [`GradCheckConfig::kink_guard`]) drops the elements whose stencil straddles one,
/// and a `step` below the default makes such stencils rarer.
pub fn model_trial<S: Scalar>(
    kind: RecurrentKind,
    seed: u64,
    elements_per_param: usize,
    step: Option<f64>,
    kink_guard: Option<f64>,
) -> Result<TrialOutcome> {
    let mut rng = rng_from(derive(seed, "trial", &[]));
    let n_classes = if rng.gen::<bool>() { 2 } else { 5 };
    let label = rng.gen_range(0..n_classes);
    let spec = miniature_spec(kind, n_classes);
    let params = build_model::<S>(&spec, derive(seed, "init", &[]))?;
    let rgb: Tensor<S> = rand_tensor(&mut rng, &[3, 3, 16, 16], 1.0);
    let flow: Tensor<S> = rand_tensor(&mut rng, &[3, 3, 16, 16], 1.0);
    let cfg = GradCheckConfig {
        max_elements_per_param: Some(elements_per_param),
        seed,
        step,
        kink_guard,
        ..GradCheckConfig::with_tolerance(f64::INFINITY)
    };
    let r = grad_check(
        &params,
        |tape, ps| {
            let a = tape.constant(rgb.clone());
            let b = tape.constant(flow.clone());
            let logits = forward(tape, &spec, ps, a, b)?;
            tape.softmax_cross_entropy(logits, label)
        },
        &cfg,
    )?;
    let op = match kind {
        RecurrentKind::Lstm => "model(lstm)",
        RecurrentKind::ConvLstm => "model(convlstm)",
        RecurrentKind::None => "model(none)",
    };
    Ok(TrialOutcome::from_report(op, &r))
}
