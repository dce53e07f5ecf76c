//! Run configuration: flat `section.key=value` text.
//!
//! Every key has a default; files and `--set` overrides replace values by
//! key, and unknown keys are errors. Values are kept as the text they were
//! given in, so the resolved echo repeats them verbatim (`train.lr=1e-5`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gestureflow_core::flow::FlowConfig;
use gestureflow_core::model::{ExtractorSpec, ModelSpec, RecurrentKind, RecurrentSpec};
use gestureflow_core::optim::AdamConfig;
use gestureflow_core::synth::SynthSpec;
use gestureflow_core::training::{Task, TrainConfig};
use gestureflow_core::video::{CropMode, PreprocessConfig};

use crate::error::{Error, Result};

/// `(key, default, description)` for every accepted key, in echo order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("run.task", "identification", "identification | classification"),
    ("run.corpus", "corpus", "directory holding manifest.csv"),
    ("run.out", "runs", "output directory"),
    ("run.seed", "0", "root of every derived seed"),
    ("run.kinds", "lstm,convlstm", "recurrent heads run by `reproduce`"),
    ("model.extractor", "canonical", "canonical | reduced:<channels> | miniature:<channels>"),
    ("model.recurrent", "lstm", "lstm | convlstm | none (used by `train`/`eval`)"),
    ("model.lstm_reduce", "128", "linear reduction before the LSTM"),
    ("model.lstm_layers", "64,128", "LSTM layer widths"),
    ("model.convlstm_kernel", "3", "convLSTM kernel size (stride 1)"),
    ("model.convlstm_channels", "256", "convLSTM hidden channels; must match the extractor"),
    ("model.init_seed_offset", "0", "added to the run seed for parameter init"),
    ("train.epochs_identification", "25", "epochs for the 2-class task"),
    ("train.epochs_classification", "7", "epochs for the 5-class task"),
    ("train.batch_size", "1", "clips per update (only 1 is supported)"),
    ("train.optimizer", "adam", "adam"),
    ("train.lr", "1e-5", "Adam learning rate"),
    ("train.beta1", "0.9", "Adam first-moment decay"),
    ("train.beta2", "0.999", "Adam second-moment decay"),
    ("train.eps", "1e-8", "Adam epsilon"),
    ("train.splits", "3", "independent train/test splits"),
    ("train.train_fraction", "0.8", "per-class share of clips used for training"),
    ("train.balance", "upsample", "class balancing (upsample)"),
    ("train.clip_norm", "100", "gradient-norm ceiling, NaN guard only"),
    ("preprocess.resize", "240", "resize target, N or HxW"),
    ("preprocess.crop", "224", "crop size, N or HxW"),
    ("preprocess.stride", "4", "temporal decimation"),
    ("preprocess.window_seconds", "4", "training window length"),
    ("preprocess.mean", "0.485,0.456,0.406", "per-channel mean after /255"),
    ("preprocess.std", "0.229,0.224,0.225", "per-channel deviation after /255"),
    ("flow.alpha", "15", "Horn-Schunck smoothness on the 8-bit intensity scale"),
    ("flow.iterations", "100", "Jacobi iterations per pyramid level"),
    ("flow.levels", "3", "pyramid levels"),
    ("flow.max_magnitude", "8", "flow magnitude (px/frame) at full saturation"),
    ("flow.cache_mb", "2048", "memory for cached flow images, shared by all runs of one command"),
    ("synth.positives", "40", "identification: clips with motion"),
    ("synth.negatives", "40", "identification: static clips"),
    ("synth.counts", "30,20,19,23,9", "classification: clips per class"),
    ("synth.height", "240", "frame height"),
    ("synth.width", "320", "frame width"),
    ("synth.fps", "30", "frame rate"),
    ("synth.duration", "5,13", "clip duration range in seconds"),
    ("synth.speed", "1,3", "motion speed range in px/frame"),
    ("synth.noise", "3", "pixel noise deviation (8-bit units)"),
    ("synth.seed", "1", "corpus seed"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("{key}={value}: expected {want}"))
}

impl RunConfig {
    /// Defaults with the assignments in `text` applied.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, "config")?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_assignment(line)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", n + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared config key {key}"))
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, want: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| bad(key, v, want))
    }

    fn list<T: std::str::FromStr>(&self, key: &str, want: &str) -> Result<Vec<T>> {
        let v = self.get(key);
        v.split(',').map(|s| s.trim().parse().map_err(|_| bad(key, v, want))).collect()
    }

    fn pair(&self, key: &str) -> Result<(f64, f64)> {
        match self.list::<f64>(key, "two comma-separated numbers")?.as_slice() {
            [a, b] => Ok((*a, *b)),
            _ => Err(bad(key, self.get(key), "two comma-separated numbers")),
        }
    }

    fn size(&self, key: &str) -> Result<(usize, usize)> {
        let v = self.get(key);
        let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(key, v, "N or HxW"));
        match v.split_once('x') {
            Some((h, w)) => Ok((parse(h)?, parse(w)?)),
            None => {
                let n = parse(v)?;
                Ok((n, n))
            }
        }
    }

    fn triple(&self, key: &str) -> Result<[f64; 3]> {
        let v: Vec<f64> = self.list(key, "three comma-separated numbers")?;
        v.try_into().map_err(|_| bad(key, self.get(key), "three comma-separated numbers"))
    }

    /// Path-valued key, relative to the working directory.
    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.get(key))
    }

    pub fn task(&self) -> Result<Task> {
        Ok(self.get("run.task").parse()?)
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse_as("run.seed", "an unsigned integer")
    }

    pub fn kinds(&self) -> Result<Vec<RecurrentKind>> {
        self.get("run.kinds")
            .split(',')
            .map(|s| Ok(s.trim().parse::<RecurrentKind>()?))
            .collect()
    }

    pub fn recurrent_kind(&self) -> Result<RecurrentKind> {
        Ok(self.get("model.recurrent").parse()?)
    }

    pub fn extractor(&self) -> Result<ExtractorSpec> {
        let v = self.get("model.extractor");
        let channels = |s: &str| s.parse::<usize>().map_err(|_| bad("model.extractor", v, "<name>:<channels>"));
        match v.split_once(':') {
            None if v == "canonical" => Ok(ExtractorSpec::canonical()),
            Some(("reduced", c)) => Ok(ExtractorSpec::reduced(channels(c)?)),
            Some(("miniature", c)) => Ok(ExtractorSpec::miniature(channels(c)?)),
            _ => Err(bad("model.extractor", v, "canonical | reduced:<channels> | miniature:<channels>")),
        }
    }

    pub fn preprocess(&self) -> Result<PreprocessConfig> {
        let cfg = PreprocessConfig {
            resize_to: self.size("preprocess.resize")?,
            crop_to: self.size("preprocess.crop")?,
            crop_mode: CropMode::Random,
            temporal_stride: self.parse_as("preprocess.stride", "a positive integer")?,
            window_seconds: self.parse_as("preprocess.window_seconds", "seconds")?,
            mean: self.triple("preprocess.mean")?,
            std: self.triple("preprocess.std")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self, kind: RecurrentKind) -> Result<ModelSpec> {
        let recurrent = RecurrentSpec {
            kind,
            lstm_reduce: self.parse_as("model.lstm_reduce", "a positive integer")?,
            lstm_widths: self.list("model.lstm_layers", "comma-separated widths")?,
            conv_kernel: self.parse_as("model.convlstm_kernel", "an odd integer")?,
            conv_hidden: self.parse_as("model.convlstm_channels", "a positive integer")?,
        };
        let spec = ModelSpec {
            extractor: self.extractor()?,
            recurrent,
            n_classes: self.task()?.n_classes(),
            input: self.preprocess()?.crop_to,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn init_seed(&self) -> Result<u64> {
        let off: u64 = self.parse_as("model.init_seed_offset", "an unsigned integer")?;
        Ok(self.seed()?.wrapping_add(off))
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let task = self.task()?;
        let epochs_key = match task {
            Task::Identification => "train.epochs_identification",
            Task::Classification => "train.epochs_classification",
        };
        if self.get("train.optimizer") != "adam" {
            return Err(bad("train.optimizer", self.get("train.optimizer"), "adam"));
        }
        if self.get("train.balance") != "upsample" {
            return Err(bad("train.balance", self.get("train.balance"), "upsample"));
        }
        let cfg = TrainConfig {
            task,
            epochs: self.parse_as(epochs_key, "an epoch count")?,
            batch_size: self.parse_as("train.batch_size", "1")?,
            adam: AdamConfig {
                lr: self.parse_as("train.lr", "a learning rate")?,
                beta1: self.parse_as("train.beta1", "a real in [0, 1)")?,
                beta2: self.parse_as("train.beta2", "a real in [0, 1)")?,
                eps: self.parse_as("train.eps", "a positive real")?,
            },
            n_splits: self.parse_as("train.splits", "a positive integer")?,
            train_fraction: self.parse_as("train.train_fraction", "a fraction")?,
            clip_norm: self.parse_as("train.clip_norm", "a positive real")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn flow(&self) -> Result<FlowConfig> {
        let alpha8: f64 = self.parse_as("flow.alpha", "a positive real")?;
        let cfg = FlowConfig {
            alpha: alpha8 / 255.0,
            iterations: self.parse_as("flow.iterations", "a positive integer")?,
            pyramid_levels: self.parse_as("flow.levels", "a positive integer")?,
            encode_max_magnitude: self.parse_as("flow.max_magnitude", "a positive real")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn flow_cache_bytes(&self) -> Result<usize> {
        let mb: usize = self.parse_as("flow.cache_mb", "megabytes")?;
        Ok(mb << 20)
    }

    pub fn synth(&self) -> Result<SynthSpec> {
        let seed = self.parse_as("synth.seed", "an unsigned integer")?;
        let mut spec = match self.task()? {
            Task::Identification => SynthSpec::identification(
                self.parse_as("synth.positives", "a clip count")?,
                self.parse_as("synth.negatives", "a clip count")?,
                seed,
            ),
            Task::Classification => {
                let counts: Vec<usize> = self.list("synth.counts", "five clip counts")?;
                let counts: [usize; 5] = counts
                    .try_into()
                    .map_err(|_| bad("synth.counts", self.get("synth.counts"), "five clip counts"))?;
                SynthSpec::classification(counts, seed)
            }
        };
        spec.height = self.parse_as("synth.height", "pixels")?;
        spec.width = self.parse_as("synth.width", "pixels")?;
        spec.fps = self.parse_as("synth.fps", "frames per second")?;
        spec.duration = self.pair("synth.duration")?;
        spec.speed = self.pair("synth.speed")?;
        spec.noise_sigma = self.parse_as("synth.noise", "a deviation")?;
        spec.validate()?;
        Ok(spec)
    }

    /// Parses every typed view so errors surface before any work starts.
    pub fn check(&self) -> Result<()> {
        self.task()?;
        self.seed()?;
        for k in self.kinds()? {
            self.model(k)?;
        }
        self.model(self.recurrent_kind()?)?;
        self.train()?;
        self.flow()?;
        self.flow_cache_bytes()?;
        self.synth()?;
        Ok(())
    }

    /// `key=value` lines for every key, preceded by the code version.
    pub fn resolved(&self) -> String {
        let mut out = format!("# gestureflow {}\ncode.version={}\n", env!("CARGO_PKG_VERSION"), env!("CARGO_PKG_VERSION"));
        let mut section = "";
        for (k, _, _) in KEYS {
            let s = k.split('.').next().unwrap_or("");
            if s != section {
                out.push('\n');
                section = s;
            }
            out.push_str(&format!("{k}={}\n", self.values[*k]));
        }
        out
    }
}
