//! Two-stream network: per-stream convolutional extractors, channel
//! concatenation, a recurrent head (LSTM or convolutional LSTM) and a linear
//! classifier on the last time step.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::ParamStore;
use crate::rng::{derive, rng_from, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One convolution (ReLU after it), optionally followed by max pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `(kernel, stride)` of a max pool after the activation.
    pub pool: Option<(usize, usize)>,
}

impl ConvLayer {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, pad: usize, pool: Option<(usize, usize)>) -> Self {
        ConvLayer {
            out_channels,
            kernel,
            stride,
            pad,
            pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractorSpec {
    pub layers: Vec<ConvLayer>,
}

fn conv_out(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(k).map(|r| r / stride + 1)
}

impl ExtractorSpec {
    /// The ungrouped five-convolution AlexNet stack: 256 channels at 6x6 for a
    /// 224x224 input.
    pub fn canonical() -> Self {
        ExtractorSpec {
            layers: vec![
                ConvLayer::new(64, 11, 4, 2, Some((3, 2))),
                ConvLayer::new(192, 5, 1, 2, Some((3, 2))),
                ConvLayer::new(384, 3, 1, 1, None),
                ConvLayer::new(256, 3, 1, 1, None),
                ConvLayer::new(256, 3, 1, 1, Some((3, 2))),
            ],
        }
    }

    /// Three-layer extractor for small inputs: `conv(c/2, k5, s2) + pool(2,2)`,
    /// then two `conv(c, k3) + pool(2,2)` stages. 64x64 input gives `c x 4 x 4`.
    pub fn reduced(channels: usize) -> Self {
        ExtractorSpec {
            layers: vec![
                ConvLayer::new((channels / 2).max(1), 5, 2, 2, Some((2, 2))),
                ConvLayer::new(channels, 3, 1, 1, Some((2, 2))),
                ConvLayer::new(channels, 3, 1, 1, Some((2, 2))),
            ],
        }
    }

    /// Two-layer extractor used for gradient checks on 16x16 inputs:
    /// `conv(c, k3, s2, p1) + pool(2,2)` then `conv(c, k3, s1, p1)`.
    pub fn miniature(channels: usize) -> Self {
        ExtractorSpec {
            layers: vec![
                ConvLayer::new(channels, 3, 2, 1, Some((2, 2))),
                ConvLayer::new(channels, 3, 1, 1, None),
            ],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(3, |l| l.out_channels)
    }

    /// Feature map shape `(C, H, W)` for a 3-channel `h x w` input.
    pub fn output_shape(&self, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("extractor has no layers".into()));
        }
        let (mut c, mut h, mut w) = (3, h, w);
        for (i, l) in self.layers.iter().enumerate() {
            if l.out_channels == 0 || l.kernel == 0 || l.stride == 0 {
                return Err(Error::InvalidSpec(format!("layer {i}: channels, kernel and stride must be positive")));
            }
            let too_small = move |h: usize, w: usize| {
                Error::InvalidSpec(format!(
                    "layer {i}: final spatial map must be at least 1x1, a {h}x{w} map is too small"
                ))
            };
            h = conv_out(h, l.kernel, l.stride, l.pad).ok_or_else(move || too_small(h, w))?;
            w = conv_out(w, l.kernel, l.stride, l.pad).ok_or_else(move || too_small(h, w))?;
            if let Some((k, s)) = l.pool {
                if k == 0 || s == 0 {
                    return Err(Error::InvalidSpec(format!("layer {i}: pool kernel and stride must be positive")));
                }
                h = conv_out(h, k, s, 0).ok_or_else(move || too_small(h, w))?;
                w = conv_out(w, k, s, 0).ok_or_else(move || too_small(h, w))?;
            }
            if h == 0 || w == 0 {
                return Err(too_small(h, w));
            }
            c = l.out_channels;
        }
        Ok((c, h, w))
    }

    pub fn parameter_count(&self) -> usize {
        let mut c_in = 3;
        let mut n = 0;
        for l in &self.layers {
            n += l.kernel * l.kernel * c_in * l.out_channels + l.out_channels;
            c_in = l.out_channels;
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecurrentKind {
    Lstm,
    ConvLstm,
    /// No recurrence: pooled last-step features go straight to the classifier.
    None,
}

impl core::str::FromStr for RecurrentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(RecurrentKind::Lstm),
            "convlstm" => Ok(RecurrentKind::ConvLstm),
            "none" => Ok(RecurrentKind::None),
            other => Err(Error::invalid("recurrent kind", format!("unknown kind {other:?}"))),
        }
    }
}

impl RecurrentKind {
    pub fn name(self) -> &'static str {
        match self {
            RecurrentKind::Lstm => "lstm",
            RecurrentKind::ConvLstm => "convlstm",
            RecurrentKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecurrentSpec {
    pub kind: RecurrentKind,
    /// Linear reduction of the pooled two-stream features before the LSTM.
    pub lstm_reduce: usize,
    pub lstm_widths: Vec<usize>,
    pub conv_kernel: usize,
    pub conv_hidden: usize,
}

impl RecurrentSpec {
    pub fn lstm() -> Self {
        RecurrentSpec {
            kind: RecurrentKind::Lstm,
            lstm_reduce: 128,
            lstm_widths: vec![64, 128],
            conv_kernel: 3,
            conv_hidden: 256,
        }
    }

    pub fn conv_lstm(hidden: usize) -> Self {
        RecurrentSpec {
            kind: RecurrentKind::ConvLstm,
            conv_hidden: hidden,
            ..Self::lstm()
        }
    }

    pub fn none() -> Self {
        RecurrentSpec {
            kind: RecurrentKind::None,
            ..Self::lstm()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub extractor: ExtractorSpec,
    pub recurrent: RecurrentSpec,
    pub n_classes: usize,
    /// Spatial input size `(H, W)` of both streams.
    pub input: (usize, usize),
}

/// Exact trainable-parameter counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub per_extractor: usize,
    pub recurrent: usize,
    pub head: usize,
    pub total: usize,
    /// `(layer prefix, count)` for every recurrent layer, in order.
    pub recurrent_layers: Vec<(String, usize)>,
}

fn lstm_count(input: usize, hidden: usize) -> usize {
    4 * hidden * (input + hidden) + 4 * hidden
}

impl ModelSpec {
    pub fn canonical(kind: RecurrentKind, n_classes: usize) -> Self {
        let recurrent = match kind {
            RecurrentKind::Lstm => RecurrentSpec::lstm(),
            RecurrentKind::ConvLstm => RecurrentSpec::conv_lstm(256),
            RecurrentKind::None => RecurrentSpec::none(),
        };
        ModelSpec {
            extractor: ExtractorSpec::canonical(),
            recurrent,
            n_classes,
            input: (224, 224),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes != 2 && self.n_classes != 5 {
            return Err(Error::InvalidSpec(format!("n_classes must be 2 or 5, got {}", self.n_classes)));
        }
        self.extractor.output_shape(self.input.0, self.input.1)?;
        let c = self.extractor.out_channels();
        let r = &self.recurrent;
        match r.kind {
            RecurrentKind::ConvLstm => {
                if r.conv_hidden != c {
                    return Err(Error::InvalidSpec(format!(
                        "convlstm hidden channels ({}) must equal the extractor's final channel count ({c})",
                        r.conv_hidden
                    )));
                }
                if r.conv_kernel % 2 == 0 {
                    return Err(Error::InvalidSpec(format!("convlstm kernel must be odd, got {}", r.conv_kernel)));
                }
            }
            RecurrentKind::Lstm => {
                if r.lstm_reduce == 0 || r.lstm_widths.is_empty() || r.lstm_widths.contains(&0) {
                    return Err(Error::InvalidSpec("lstm reduction and layer widths must be positive".into()));
                }
            }
            RecurrentKind::None => {}
        }
        Ok(())
    }

    fn head_inputs(&self) -> usize {
        match self.recurrent.kind {
            RecurrentKind::Lstm => *self.recurrent.lstm_widths.last().expect("validated"),
            RecurrentKind::ConvLstm => self.recurrent.conv_hidden,
            RecurrentKind::None => 2 * self.extractor.out_channels(),
        }
    }

    /// Closed-form parameter counts.
    pub fn parameter_count(&self) -> ParamCount {
        let per_extractor = self.extractor.parameter_count();
        let fused = 2 * self.extractor.out_channels();
        let r = &self.recurrent;
        let mut layers = Vec::new();
        match r.kind {
            RecurrentKind::Lstm => {
                layers.push(("reduce".to_string(), fused * r.lstm_reduce + r.lstm_reduce));
                let mut input = r.lstm_reduce;
                for (i, &h) in r.lstm_widths.iter().enumerate() {
                    layers.push((format!("lstm{i}"), lstm_count(input, h)));
                    input = h;
                }
            }
            RecurrentKind::ConvLstm => {
                let k2 = r.conv_kernel * r.conv_kernel;
                let h = r.conv_hidden;
                layers.push(("convlstm".to_string(), 4 * (k2 * (fused + h) * h + h)));
            }
            RecurrentKind::None => {}
        }
        let recurrent = layers.iter().map(|(_, n)| n).sum();
        let head = self.head_inputs() * self.n_classes + self.n_classes;
        ParamCount {
            per_extractor,
            recurrent,
            head,
            total: 2 * per_extractor + recurrent + head,
            recurrent_layers: layers,
        }
    }
}

/// Counts parameters in an instantiated store, grouped by name prefix.
pub fn count_parameters<S: Scalar>(params: &ParamStore<S>) -> ParamCount {
    let mut rgb = 0;
    let mut flow = 0;
    let mut head = 0;
    let mut layers: Vec<(String, usize)> = Vec::new();
    for (name, t) in params.iter() {
        let prefix = name.split('.').next().unwrap_or("");
        match prefix {
            "rgb" => rgb += t.len(),
            "flow" => flow += t.len(),
            "head" => head += t.len(),
            _ => match layers.iter_mut().find(|(p, _)| p == prefix) {
                Some(entry) => entry.1 += t.len(),
                None => layers.push((prefix.to_string(), t.len())),
            },
        }
    }
    // names iterate sorted; put layers in forward order
    layers.sort_by_key(|(p, _)| match p.as_str() {
        "reduce" => (0, String::new()),
        other => (1, other.to_string()),
    });
    debug_assert_eq!(rgb, flow);
    let recurrent = layers.iter().map(|(_, n)| n).sum();
    ParamCount {
        per_extractor: rgb,
        recurrent,
        head,
        total: rgb + flow + recurrent + head,
        recurrent_layers: layers,
    }
}

fn uniform<S: Scalar>(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Deterministic parameter initialisation. Convolutions use He-uniform
/// weights and zero biases; dense and recurrent weights use
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; LSTM forget-gate biases start at 1.
pub fn build_model<S: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ParamStore<S>> {
    spec.validate()?;
    let mut store = ParamStore::new();
    for (si, stream) in ["rgb", "flow"].into_iter().enumerate() {
        let mut rng = rng_from(derive(seed, "init", &[si as u64]));
        let mut c_in = 3;
        for (i, l) in spec.extractor.layers.iter().enumerate() {
            let fan_in = c_in * l.kernel * l.kernel;
            let w = uniform::<S>(&mut rng, &[l.out_channels, c_in, l.kernel, l.kernel], libm::sqrt(6.0 / fan_in as f64));
            store.insert(format!("{stream}.conv{i}.weight"), w);
            store.insert(format!("{stream}.conv{i}.bias"), Tensor::zeros(&[l.out_channels]));
            c_in = l.out_channels;
        }
    }
    let mut rng = rng_from(derive(seed, "init", &[2]));
    let fused = 2 * spec.extractor.out_channels();
    let r = &spec.recurrent;
    let gate_bias = |h: usize| {
        let mut b = Tensor::<S>::zeros(&[4 * h]);
        b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = S::ONE);
        b
    };
    match r.kind {
        RecurrentKind::Lstm => {
            let bound = 1.0 / libm::sqrt(fused as f64);
            store.insert("reduce.weight", uniform::<S>(&mut rng, &[r.lstm_reduce, fused], bound));
            store.insert("reduce.bias", Tensor::zeros(&[r.lstm_reduce]));
            let mut input = r.lstm_reduce;
            for (i, &h) in r.lstm_widths.iter().enumerate() {
                let bound = 1.0 / libm::sqrt((input + h) as f64);
                store.insert(format!("lstm{i}.weight"), uniform::<S>(&mut rng, &[4 * h, input + h], bound));
                store.insert(format!("lstm{i}.bias"), gate_bias(h));
                input = h;
            }
        }
        RecurrentKind::ConvLstm => {
            let (k, h) = (r.conv_kernel, r.conv_hidden);
            let bound = 1.0 / libm::sqrt(((fused + h) * k * k) as f64);
            store.insert("convlstm.weight", uniform::<S>(&mut rng, &[4 * h, fused + h, k, k], bound));
            store.insert("convlstm.bias", gate_bias(h));
        }
        RecurrentKind::None => {}
    }
    let d = spec.head_inputs();
    let bound = 1.0 / libm::sqrt(d as f64);
    store.insert("head.weight", uniform::<S>(&mut rng, &[spec.n_classes, d], bound));
    store.insert("head.bias", Tensor::zeros(&[spec.n_classes]));
    Ok(store)
}

/// Runs one stream's extractor over `[T, 3, H, W]` input, giving `[T, C, h, w]`.
pub fn extract<S: Scalar>(tape: &mut Tape<S>, spec: &ExtractorSpec, params: &ParamStore<S>, stream: &str, x: Var) -> Result<Var> {
    let mut x = x;
    for (i, l) in spec.layers.iter().enumerate() {
        let w = params.bind(tape, &format!("{stream}.conv{i}.weight"))?;
        let b = params.bind(tape, &format!("{stream}.conv{i}.bias"))?;
        x = tape.conv2d(x, w, b, l.stride, l.pad)?;
        x = tape.relu(x);
        if let Some((k, s)) = l.pool {
            x = tape.max_pool(x, k, s)?;
        }
    }
    Ok(x)
}

/// Splits fused gate pre-activations (leading axis `4h`, order i, f, g, o)
/// and advances `(h, c)`.
fn gated_update<S: Scalar>(tape: &mut Tape<S>, gates: Var, c: Var, hidden: usize) -> Result<(Var, Var)> {
    let i = tape.narrow(gates, 0, hidden)?;
    let f = tape.narrow(gates, hidden, hidden)?;
    let g = tape.narrow(gates, 2 * hidden, hidden)?;
    let o = tape.narrow(gates, 3 * hidden, hidden)?;
    let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Logits `[n_classes]` for one clip given `[T, 3, H, W]` RGB and flow inputs.
pub fn forward<S: Scalar>(tape: &mut Tape<S>, spec: &ModelSpec, params: &ParamStore<S>, rgb: Var, flow: Var) -> Result<Var> {
    let (rs, fs) = (tape.shape(rgb).to_vec(), tape.shape(flow).to_vec());
    if rs.len() != 4 || fs.len() != 4 {
        return Err(Error::shape("forward_clip", format!("inputs {rs:?} and {fs:?} must be [T, 3, H, W]")));
    }
    if rs[0] != fs[0] {
        return Err(Error::shape(
            "forward_clip",
            format!("stream length mismatch: {} RGB frames, {} flow frames", rs[0], fs[0]),
        ));
    }
    if rs[0] == 0 {
        return Err(Error::shape("forward_clip", "clips need at least one frame"));
    }
    let steps = rs[0];
    let a = extract(tape, &spec.extractor, params, "rgb", rgb)?;
    let b = extract(tape, &spec.extractor, params, "flow", flow)?;
    let fused = tape.concat(&[a, b], 1)?;
    let r = &spec.recurrent;
    let readout = match r.kind {
        RecurrentKind::None => {
            let last = tape.select(fused, steps - 1)?;
            tape.global_avg_pool(last)?
        }
        RecurrentKind::Lstm => {
            let pooled = tape.global_avg_pool(fused)?;
            let w = params.bind(tape, "reduce.weight")?;
            let bias = params.bind(tape, "reduce.bias")?;
            let mut seq: Vec<Var> = Vec::with_capacity(steps);
            let reduced = tape.linear(pooled, w, bias)?;
            for t in 0..steps {
                seq.push(tape.select(reduced, t)?);
            }
            for (li, &hidden) in r.lstm_widths.iter().enumerate() {
                let w = params.bind(tape, &format!("lstm{li}.weight"))?;
                let bias = params.bind(tape, &format!("lstm{li}.bias"))?;
                let mut h = tape.constant(Tensor::zeros(&[hidden]));
                let mut c = tape.constant(Tensor::zeros(&[hidden]));
                let mut out = Vec::with_capacity(steps);
                for &x in &seq {
                    let xh = tape.concat(&[x, h], 0)?;
                    let gates = tape.linear(xh, w, bias)?;
                    (h, c) = gated_update(tape, gates, c, hidden)?;
                    out.push(h);
                }
                seq = out;
            }
            *seq.last().expect("steps >= 1")
        }
        RecurrentKind::ConvLstm => {
            let shape = tape.shape(fused).to_vec();
            let (hidden, fh, fw) = (r.conv_hidden, shape[2], shape[3]);
            let w = params.bind(tape, "convlstm.weight")?;
            let bias = params.bind(tape, "convlstm.bias")?;
            let mut h = tape.constant(Tensor::zeros(&[hidden, fh, fw]));
            let mut c = tape.constant(Tensor::zeros(&[hidden, fh, fw]));
            for t in 0..steps {
                let x = tape.select(fused, t)?;
                let xh = tape.concat(&[x, h], 0)?;
                let gates = tape.conv2d(xh, w, bias, 1, r.conv_kernel / 2)?;
                (h, c) = gated_update(tape, gates, c, hidden)?;
            }
            tape.global_avg_pool(h)?
        }
    };
    let w = params.bind(tape, "head.weight")?;
    let b = params.bind(tape, "head.bias")?;
    tape.linear(readout, w, b)
}

/// Logits for one clip, without keeping the tape.
pub fn forward_clip<S: Scalar>(spec: &ModelSpec, params: &ParamStore<S>, rgb: &Tensor<S>, flow: &Tensor<S>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let r = tape.constant(rgb.clone());
    let f = tape.constant(flow.clone());
    let logits = forward(&mut tape, spec, params, r, f)?;
    Ok(tape.value(logits).clone())
}
