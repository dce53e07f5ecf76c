//! Training protocol: stratified splits, class balancing and the Adam loop.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::autodiff::{softmax, Tape};
use crate::error::{Error, Result};
use crate::model::{self, ModelSpec};
use crate::optim::{adam_step, clip_global_norm, AdamConfig, ParamStore};
use crate::rng::{derive, rng_from};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which of the two label spaces a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Binary: is the gesture present (1) or not (0).
    Identification,
    /// Five gesture types.
    Classification,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Identification => 2,
            Task::Classification => 5,
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            Task::Identification => 25,
            Task::Classification => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Identification => "identification",
            Task::Classification => "classification",
        }
    }
}

impl core::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identification" => Ok(Task::Identification),
            "classification" => Ok(Task::Classification),
            other => Err(Error::invalid("task", format!("unknown task {other:?}"))),
        }
    }
}

/// One corpus entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub id: String,
    pub label: usize,
    /// Seconds.
    pub duration: f64,
}

/// Indices into the corpus for one train/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn round_half_up(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}

/// Number of training clips for a class of `n` members.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    round_half_up(train_fraction * n as f64).min(n)
}

fn class_members(labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut members = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::LabelOutOfRange { label: l, classes: n_classes });
        }
        members[l].push(i);
    }
    Ok(members)
}

/// `n_splits` independent stratified partitions: per class, a seeded shuffle
/// puts `round_half_up(train_fraction * count)` members in train.
pub fn make_splits(corpus: &[LabeledClip], n_classes: usize, n_splits: usize, train_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if corpus.is_empty() {
        return Err(Error::invalid("make_splits", "empty corpus"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("make_splits", format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let labels: Vec<usize> = corpus.iter().map(|c| c.label).collect();
    let members = class_members(&labels, n_classes)?;
    if let Some((k, m)) = members.iter().enumerate().find(|(_, m)| m.len() < 2) {
        return Err(Error::invalid(
            "make_splits",
            format!("class {k} has {} clips, at least 2 are required", m.len()),
        ));
    }
    Ok((0..n_splits)
        .map(|s| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (k, m) in members.iter().enumerate() {
                let mut m = m.clone();
                m.shuffle(&mut rng_from(derive(seed, "split", &[s as u64, k as u64])));
                let n_train = train_count(m.len(), train_fraction);
                train.extend_from_slice(&m[..n_train]);
                test.extend_from_slice(&m[n_train..]);
            }
            train.sort_unstable();
            test.sort_unstable();
            Split { train, test }
        })
        .collect())
}

/// Repeats minority-class clips (cyclically, in a seeded order) until every
/// class has the majority count. Majority classes pass through unchanged.
pub fn upsample_balance(train: &[usize], labels: &[usize], n_classes: usize, seed: u64) -> Result<Vec<usize>> {
    let own: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let members = class_members(&own, n_classes)?;
    if let Some(k) = members.iter().position(Vec::is_empty) {
        return Err(Error::invalid("upsample_balance", format!("class {k} has no training clips")));
    }
    let target = members.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = train.to_vec();
    for (k, m) in members.iter().enumerate() {
        let mut order: Vec<usize> = m.iter().map(|&j| train[j]).collect();
        order.shuffle(&mut rng_from(derive(seed, "balance", &[k as u64])));
        out.extend(order.iter().cycle().take(target - m.len()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub n_splits: usize,
    pub train_fraction: f64,
    /// Global gradient-norm ceiling, a guard against blow-ups only.
    pub clip_norm: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(task: Task, seed: u64) -> Self {
        TrainConfig {
            task,
            epochs: task.default_epochs(),
            batch_size: 1,
            adam: AdamConfig::default(),
            n_splits: 3,
            train_fraction: 0.8,
            clip_norm: 100.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::invalid("train", format!("batch size must be 1, got {}", self.batch_size)));
        }
        if !(self.adam.lr >= 0.0) || !self.adam.lr.is_finite() {
            return Err(Error::invalid("train", format!("learning rate {} is invalid", self.adam.lr)));
        }
        if self.n_splits == 0 {
            return Err(Error::invalid("train", "need at least one split"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("train", "clip norm must be positive"));
        }
        Ok(())
    }
}

/// Supplies preprocessed two-stream inputs and observes progress.
pub trait TrainHooks<S: Scalar> {
    /// `[T, 3, H, W]` RGB and flow tensors for corpus clip `clip`, sampled in
    /// training mode. `seed` is fresh for every visit.
    fn sample(&mut self, clip: usize, seed: u64) -> Result<(Tensor<S>, Tensor<S>)>;

    /// Called once after each epoch.
    fn on_epoch(&mut self, _log: &EpochLog, _params: &ParamStore<S>) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    /// Steps whose gradient norm exceeded the clipping ceiling.
    pub clipped: usize,
}

/// One Adam step on one clip. Returns the loss and whether clipping fired.
pub fn train_step<S: Scalar>(
    spec: &ModelSpec,
    params: &mut ParamStore<S>,
    rgb: Tensor<S>,
    flow: Tensor<S>,
    label: usize,
    cfg: &TrainConfig,
) -> Result<(f64, bool)> {
    let mut tape = Tape::new();
    let r = tape.constant(rgb);
    let f = tape.constant(flow);
    let logits = model::forward(&mut tape, spec, params, r, f)?;
    let loss = tape.softmax_cross_entropy(logits, label)?;
    let value = tape.value(loss).item().to_f64();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss {value}")));
    }
    let mut grads = tape.backward(loss)?.into_params();
    let (_, clipped) = clip_global_norm(&mut grads, cfg.clip_norm);
    adam_step(params, &grads, &cfg.adam)?;
    Ok((value, clipped))
}

/// Trains on one split. Every epoch reshuffles the balanced multiset with a
/// seed derived from `(seed, split, epoch)`; each visit gets its own sampling
/// seed.
pub fn train<S: Scalar, H: TrainHooks<S>>(
    spec: &ModelSpec,
    params: &mut ParamStore<S>,
    corpus: &[LabeledClip],
    split: &Split,
    split_index: usize,
    cfg: &TrainConfig,
    hooks: &mut H,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let labels: Vec<usize> = corpus.iter().map(|c| c.label).collect();
    let n_classes = spec.n_classes;
    let s = split_index as u64;
    let balanced = upsample_balance(&split.train, &labels, n_classes, derive(cfg.seed, "balance", &[s]))?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = balanced.clone();
        order.shuffle(&mut rng_from(derive(cfg.seed, "shuffle", &[s, epoch as u64])));
        let (mut total, mut clipped) = (0.0, 0);
        for (pos, &clip) in order.iter().enumerate() {
            let visit = derive(cfg.seed, "visit", &[s, epoch as u64, pos as u64]);
            let (rgb, flow) = hooks.sample(clip, visit)?;
            let (loss, c) = train_step(spec, params, rgb, flow, labels[clip], cfg).map_err(|e| match e {
                Error::NonFiniteLoss(msg) => {
                    Error::NonFiniteLoss(format!("{msg} on clip {} in epoch {}", corpus[clip].id, epoch + 1))
                }
                other => other,
            })?;
            total += loss;
            clipped += c as usize;
        }
        let log = EpochLog {
            epoch: epoch + 1,
            mean_loss: total / order.len().max(1) as f64,
            steps: order.len(),
            clipped,
        };
        hooks.on_epoch(&log, params);
        logs.push(log);
    }
    Ok(logs)
}

/// Class probabilities for one clip.
pub fn predict<S: Scalar>(spec: &ModelSpec, params: &ParamStore<S>, rgb: &Tensor<S>, flow: &Tensor<S>) -> Result<Vec<f64>> {
    let logits = model::forward_clip(spec, params, rgb, flow)?;
    let z: Vec<f64> = logits.data().iter().map(|v| v.to_f64()).collect();
    Ok(softmax(&z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ExtractorSpec, RecurrentSpec};
    use alloc::collections::BTreeSet;
    use alloc::string::ToString;

    fn corpus(counts: &[usize]) -> Vec<LabeledClip> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(label, &n)| (0..n).map(move |i| (label, i)))
            .map(|(label, i)| LabeledClip {
                id: format!("c{label}_{i}"),
                label,
                duration: 6.0,
            })
            .collect()
    }

    #[test]
    fn reference_profile_split_arithmetic() {
        let c = corpus(&crate::synth::REFERENCE_CLASS_COUNTS);
        let splits = make_splits(&c, 5, 3, 0.8, 1).unwrap();
        for s in &splits {
            let mut per_class = [0usize; 5];
            for &i in &s.train {
                per_class[c[i].label] += 1;
            }
            assert_eq!(per_class, [120, 81, 77, 94, 38]);
            assert_eq!((s.train.len(), s.test.len()), (410, 101));
            let train: BTreeSet<_> = s.train.iter().collect();
            assert!(s.test.iter().all(|i| !train.contains(i)));
            assert_eq!(train.len() + s.test.len(), c.len());
        }
        assert_eq!(splits, make_splits(&c, 5, 3, 0.8, 1).unwrap());
    }

    #[test]
    fn small_split_and_errors() {
        let c = corpus(&[5, 5]);
        let s = &make_splits(&c, 2, 1, 0.8, 0).unwrap()[0];
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        let e = make_splits(&corpus(&[5, 1]), 2, 3, 0.8, 0).unwrap_err().to_string();
        assert!(e.contains("class 1"), "{e}");
        assert!(make_splits(&[], 2, 3, 0.8, 0).is_err());
    }

    #[test]
    fn identification_counts_balance() {
        assert_eq!(train_count(1209, 0.8), 967);
        assert_eq!(train_count(1186, 0.8), 949);
        let labels: Vec<usize> = (0..1916).map(|i| (i >= 967) as usize).collect();
        let train: Vec<usize> = (0..1916).collect();
        let b = upsample_balance(&train, &labels, 2, 3).unwrap();
        let ones = b.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!((b.len() - ones, ones), (967, 967));
    }

    #[test]
    fn balancing_examples() {
        let labels = [0, 0, 0, 1];
        let b = upsample_balance(&[0, 1, 2, 3], &labels, 2, 0).unwrap();
        assert_eq!(b.iter().filter(|&&i| i == 3).count(), 3);
        let labels = [0, 1, 0, 1];
        let mut b = upsample_balance(&[0, 1, 2, 3], &labels, 2, 0).unwrap();
        b.sort();
        assert_eq!(b, vec![0, 1, 2, 3]);
        assert!(upsample_balance(&[0, 2], &labels, 2, 0).is_err());
    }

    struct Constant {
        visited: Vec<usize>,
        allowed: BTreeSet<usize>,
        eval_losses: Vec<f64>,
        spec: ModelSpec,
    }

    fn constant_clip(clip: usize) -> Tensor<f64> {
        Tensor::full(&[2, 3, 16, 16], if clip == 0 { 0.2 } else { 0.9 })
    }

    impl TrainHooks<f64> for Constant {
        fn sample(&mut self, clip: usize, _seed: u64) -> Result<(Tensor<f64>, Tensor<f64>)> {
            assert!(self.allowed.contains(&clip), "clip {clip} is not in the training set");
            self.visited.push(clip);
            Ok((constant_clip(clip), constant_clip(clip)))
        }

        fn on_epoch(&mut self, _log: &EpochLog, params: &ParamStore<f64>) {
            let loss: f64 = (0..2)
                .map(|c| -libm::log(predict(&self.spec, params, &constant_clip(c), &constant_clip(c)).unwrap()[c]))
                .sum();
            self.eval_losses.push(loss / 2.0);
        }
    }

    fn toy_spec() -> ModelSpec {
        ModelSpec {
            extractor: ExtractorSpec::miniature(4),
            recurrent: RecurrentSpec {
                lstm_reduce: 8,
                lstm_widths: vec![6, 8],
                ..RecurrentSpec::lstm()
            },
            n_classes: 2,
            input: (16, 16),
        }
    }

    fn toy_corpus() -> (Vec<LabeledClip>, Split) {
        let mut c = corpus(&[1, 1]);
        c.push(LabeledClip { id: "held_out".to_string(), label: 1, duration: 1.0 });
        (c, Split { train: vec![0, 1], test: vec![2] })
    }

    #[test]
    fn separable_toy_task_converges() {
        let spec = toy_spec();
        let (c, split) = toy_corpus();
        let mut params = build_model::<f64>(&spec, 5).unwrap();
        let mut cfg = TrainConfig::new(Task::Identification, 5);
        cfg.epochs = 50;
        cfg.adam.lr = 1e-2;
        let mut hooks = Constant {
            visited: Vec::new(),
            allowed: split.train.iter().copied().collect(),
            eval_losses: Vec::new(),
            spec: spec.clone(),
        };
        let logs = train(&spec, &mut params, &c, &split, 0, &cfg, &mut hooks).unwrap();
        assert_eq!(logs.len(), 50);
        assert!(logs[49].mean_loss < 0.05, "{}", logs[49].mean_loss);
        assert!(hooks.visited.iter().all(|&v| v < 2));
        for w in hooks.eval_losses.windows(2) {
            assert!(w[1] <= w[0], "{:?}", hooks.eval_losses);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let spec = toy_spec();
        let (c, split) = toy_corpus();
        let init = build_model::<f64>(&spec, 5).unwrap();
        let mut params = init.clone();
        let mut cfg = TrainConfig::new(Task::Identification, 5);
        cfg.epochs = 3;
        cfg.adam.lr = 0.0;
        let mut hooks = Constant {
            visited: Vec::new(),
            allowed: split.train.iter().copied().collect(),
            eval_losses: Vec::new(),
            spec: spec.clone(),
        };
        train(&spec, &mut params, &c, &split, 0, &cfg, &mut hooks).unwrap();
        assert_eq!(params.into_tensors(), init.into_tensors());
    }

    #[test]
    fn epoch_count_follows_the_task() {
        assert_eq!(TrainConfig::new(Task::Identification, 0).epochs, 25);
        assert_eq!(TrainConfig::new(Task::Classification, 0).epochs, 7);
        let mut cfg = TrainConfig::new(Task::Classification, 0);
        cfg.batch_size = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn non_finite_loss_names_clip_and_epoch() {
        let spec = toy_spec();
        let (c, split) = toy_corpus();
        let mut params = build_model::<f64>(&spec, 5).unwrap();
        params.insert("head.bias", Tensor::full(&[2], f64::NAN));
        let cfg = TrainConfig::new(Task::Identification, 5);
        let mut hooks = Constant {
            visited: Vec::new(),
            allowed: split.train.iter().copied().collect(),
            eval_losses: Vec::new(),
            spec: spec.clone(),
        };
        let e = train(&spec, &mut params, &c, &split, 0, &cfg, &mut hooks).unwrap_err().to_string();
        assert!(e.contains("epoch 1") && e.contains("clip c"), "{e}");
    }
}
