//! Commands behind the CLI: corpus synthesis, flow dumps, training,
//! evaluation and the full multi-split reproduction.
//!
//! Every artifact directory receives `config.resolved.txt`. Written files
//! depend only on the config and seed; wall-clock timings go to stderr.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gestureflow_core::flow::FlowConfig;
use gestureflow_core::metrics::{evaluate, roc_curve, EvalReport, PredictionSet, SplitMetrics};
use gestureflow_core::model::{build_model, ModelSpec, RecurrentKind};
use gestureflow_core::optim::ParamStore;
use gestureflow_core::pipeline::{flow_images, two_stream_inputs, FlowCache};
use gestureflow_core::rng::derive;
use gestureflow_core::tensor::Tensor;
use gestureflow_core::training::{make_splits, predict, train, EpochLog, LabeledClip, Split, TrainConfig, TrainHooks};
use gestureflow_core::video::{FrameSequence, Mode, PreprocessConfig};

use crate::config::RunConfig;
use crate::corpus::{generate_corpus, Corpus};
use crate::error::{Error, Result};
use crate::formats::{checkpoint, framedir};
use crate::ingest::decode_sequence;

pub const RESOLVED: &str = "config.resolved.txt";
pub const CHECKPOINT: &str = "model.gfck";

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    std::fs::write(path, text).map_err(Error::io(path))
}

pub fn write_resolved(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_file(&dir.join(RESOLVED), &cfg.resolved())
}

fn core_err(e: Error) -> gestureflow_core::Error {
    match e {
        Error::Core(c) => c,
        other => gestureflow_core::Error::InvalidData(other.to_string()),
    }
}

/// Training hooks reading clips from a corpus through the shared flow cache.
struct CorpusSampler<'a> {
    corpus: &'a Corpus,
    pre: &'a PreprocessConfig,
    flow: &'a FlowConfig,
    cache: &'a mut FlowCache,
    losses: String,
    label: String,
    verbose: bool,
    start: Instant,
}

impl TrainHooks<f32> for CorpusSampler<'_> {
    fn sample(&mut self, clip: usize, seed: u64) -> gestureflow_core::Result<(Tensor<f32>, Tensor<f32>)> {
        let mut src = self.corpus.open(clip).map_err(core_err)?;
        two_stream_inputs(&mut src, self.pre, self.flow, Mode::Train, seed, Some(self.cache))
    }

    fn on_epoch(&mut self, log: &EpochLog, _params: &ParamStore<f32>) {
        let _ = writeln!(self.losses, "{},{},{},{}", log.epoch, log.mean_loss, log.steps, log.clipped);
        if self.verbose {
            eprintln!(
                "[{}] epoch {} loss {:.4} clipped {} ({:.0}s)",
                self.label,
                log.epoch,
                log.mean_loss,
                log.clipped,
                self.start.elapsed().as_secs_f64()
            );
        }
    }
}

/// Outcome of evaluating one recurrent kind over every split.
#[derive(Debug, Clone)]
pub struct KindReport {
    pub kind: RecurrentKind,
    pub report: EvalReport,
}

/// Executes commands for one resolved config. The flow cache lives as long
/// as the runner, so `reproduce` computes each flow image once.
pub struct Runner {
    cfg: RunConfig,
    cache: FlowCache,
    pub verbose: bool,
}

impl Runner {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.check()?;
        let cache = FlowCache::with_byte_limit(cfg.flow_cache_bytes()?);
        Ok(Runner { cfg, cache, verbose: false })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> PathBuf {
        self.cfg.path("run.out")
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Renders the synthetic corpus into `run.corpus`.
    pub fn synth(&mut self) -> Result<Corpus> {
        let dir = self.cfg.path("run.corpus");
        let spec = self.cfg.synth()?;
        let start = Instant::now();
        let corpus = generate_corpus(&spec, &dir)?;
        write_resolved(&dir, &self.cfg)?;
        self.note(format!("wrote {} clips to {} ({:.0}s)", corpus.len(), dir.display(), start.elapsed().as_secs_f64()));
        Ok(corpus)
    }

    /// Encodes the flow of every kept frame of `clip` (full clip, temporal
    /// stride applied) as a PPM frame directory under `run.out/flow/<id>`.
    pub fn flow(&mut self, clip: &Path) -> Result<PathBuf> {
        let seq = decode_sequence(clip)?;
        let pre = self.cfg.preprocess()?;
        let flow = self.cfg.flow()?;
        let keep: Vec<usize> = (0..seq.len()).step_by(pre.temporal_stride).collect();
        let frames: Vec<_> = keep.iter().map(|&i| seq.frames()[i].clone()).collect();
        let images = flow_images(&frames, &flow)?;
        let out = self.out_dir().join("flow").join(seq.source_id());
        let encoded = FrameSequence::new(images, seq.fps() / pre.temporal_stride as f64, seq.source_id())?;
        framedir::write(&out, &encoded)?;
        write_resolved(&out, &self.cfg)?;
        self.note(format!("wrote {} flow images to {}", encoded.len(), out.display()));
        Ok(out)
    }

    fn corpus(&self, spec: &ModelSpec) -> Result<(Corpus, Vec<LabeledClip>, Vec<Split>, TrainConfig)> {
        let corpus = Corpus::load(self.cfg.path("run.corpus"))?;
        let labeled = corpus.labeled(spec.n_classes)?;
        let tc = self.cfg.train()?;
        let splits = make_splits(&labeled, spec.n_classes, tc.n_splits, tc.train_fraction, tc.seed)?;
        Ok((corpus, labeled, splits, tc))
    }

    /// Trains one model per split into `dir/split<k>/model.gfck`, with
    /// per-epoch losses in `dir/loss_split<k>.csv`.
    pub fn train(&mut self, kind: RecurrentKind, dir: &Path) -> Result<Vec<Vec<EpochLog>>> {
        let spec = self.cfg.model(kind)?;
        let pre = self.cfg.preprocess()?;
        let flow = self.cfg.flow()?;
        let init = self.cfg.init_seed()?;
        let (corpus, labeled, splits, tc) = self.corpus(&spec)?;
        write_resolved(dir, &self.cfg)?;
        let mut all = Vec::with_capacity(splits.len());
        for (k, split) in splits.iter().enumerate() {
            let mut params = build_model::<f32>(&spec, derive(init, "init", &[k as u64]))?;
            let mut hooks = CorpusSampler {
                corpus: &corpus,
                pre: &pre,
                flow: &flow,
                cache: &mut self.cache,
                losses: String::from("epoch,mean_train_loss,steps,clipped\n"),
                label: format!("{} split {k}", kind.name()),
                verbose: self.verbose,
                start: Instant::now(),
            };
            let logs = train(&spec, &mut params, &labeled, split, k, &tc, &mut hooks)?;
            let losses = std::mem::take(&mut hooks.losses);
            write_file(&dir.join(format!("loss_split{k}.csv")), &losses)?;
            let ckpt = dir.join(format!("split{k}")).join(CHECKPOINT);
            std::fs::create_dir_all(ckpt.parent().expect("split dir")).map_err(Error::io(dir))?;
            checkpoint::save(&ckpt, &params)?;
            write_resolved(ckpt.parent().expect("split dir"), &self.cfg)?;
            all.push(logs);
        }
        Ok(all)
    }

    /// Scores every split's test clips with `dir/split<k>/model.gfck`, or with
    /// `checkpoint` for all splits when given, and writes the metric CSVs.
    pub fn eval(&mut self, kind: RecurrentKind, dir: &Path, checkpoint_path: Option<&Path>) -> Result<EvalReport> {
        let spec = self.cfg.model(kind)?;
        let pre = self.cfg.preprocess()?;
        let flow = self.cfg.flow()?;
        let (corpus, labeled, splits, _) = self.corpus(&spec)?;
        write_resolved(dir, &self.cfg)?;
        let mut per_split = Vec::with_capacity(splits.len());
        for (k, split) in splits.iter().enumerate() {
            let path = checkpoint_path
                .map(Path::to_path_buf)
                .unwrap_or_else(|| dir.join(format!("split{k}")).join(CHECKPOINT));
            let params = checkpoint::load::<f32>(&path)?;
            let mut scores = Vec::with_capacity(split.test.len());
            let mut labels = Vec::with_capacity(split.test.len());
            let mut rows = String::from("clip,label");
            for c in 0..spec.n_classes {
                let _ = write!(rows, ",p{c}");
            }
            rows.push('\n');
            for &i in &split.test {
                let mut src = corpus.open(i)?;
                let (rgb, fl) = two_stream_inputs::<f32, _>(&mut src, &pre, &flow, Mode::Eval, 0, Some(&mut self.cache))?;
                let p = predict(&spec, &params, &rgb, &fl)?;
                let _ = write!(rows, "{},{}", labeled[i].id, labeled[i].label);
                for v in &p {
                    let _ = write!(rows, ",{v}");
                }
                rows.push('\n');
                scores.push(p);
                labels.push(labeled[i].label);
            }
            write_file(&dir.join(format!("predictions_split{k}.csv")), &rows)?;
            let preds = PredictionSet::new(spec.n_classes, scores, labels)?;
            let m = evaluate(&preds)?;
            write_file(&dir.join(format!("confusion_split{k}.csv")), &confusion_csv(&m))?;
            write_file(&dir.join(format!("roc_split{k}.csv")), &roc_csv(&preds)?)?;
            self.note(format!("[{} split {k}] auc {:.4} top1 {:.4}", kind.name(), m.auc, m.top1));
            per_split.push(m);
        }
        let report = EvalReport::from_splits(per_split)?;
        let mut metrics = String::from("split,auc,top1\n");
        for (k, s) in report.splits.iter().enumerate() {
            let _ = writeln!(metrics, "{k},{},{}", s.auc, s.top1);
        }
        let _ = writeln!(metrics, "mean,{},{}", report.mean_auc, report.mean_top1);
        write_file(&dir.join("metrics.csv"), &metrics)?;
        write_file(&dir.join("confusion_mean.csv"), &matrix_csv(&report.mean_confusion))?;
        Ok(report)
    }

    /// The split count and per-class train/test sizes `reproduce` would use.
    pub fn plan(&self) -> Result<String> {
        let task = self.cfg.task()?;
        let spec = self.cfg.model(self.cfg.kinds()?[0])?;
        let mut out = String::new();
        let _ = writeln!(out, "task={}", task.name());
        let kinds: Vec<_> = self.cfg.kinds()?.iter().map(|k| k.name()).collect();
        let _ = writeln!(out, "kinds={}", kinds.join(","));
        match self.corpus(&spec) {
            Ok((_, labeled, splits, tc)) => {
                let _ = writeln!(out, "epochs={}", tc.epochs);
                for (k, s) in splits.iter().enumerate() {
                    let count = |set: &[usize], c: usize| set.iter().filter(|&&i| labeled[i].label == c).count();
                    let tr: Vec<String> = (0..spec.n_classes).map(|c| count(&s.train, c).to_string()).collect();
                    let te: Vec<String> = (0..spec.n_classes).map(|c| count(&s.test, c).to_string()).collect();
                    let _ = writeln!(out, "split{k}.train={}", tr.join(","));
                    let _ = writeln!(out, "split{k}.test={}", te.join(","));
                }
            }
            Err(e) => {
                let _ = writeln!(out, "corpus=unavailable ({e})");
            }
        }
        Ok(out)
    }

    /// Train and evaluate every kind in `run.kinds` into `run.out/<kind>`,
    /// then write `run.out/summary.csv` with one row per kind. With
    /// `plan_only`, only the resolved config and the split plan are written.
    pub fn reproduce(&mut self, plan_only: bool) -> Result<Vec<KindReport>> {
        let out = self.out_dir();
        write_resolved(&out, &self.cfg)?;
        write_file(&out.join("plan.txt"), &self.plan()?)?;
        if plan_only {
            return Ok(Vec::new());
        }
        let mut reports = Vec::new();
        let mut summary = String::from("model,auc,acc\n");
        for kind in self.cfg.kinds()? {
            let dir = out.join(kind.name());
            let start = Instant::now();
            self.train(kind, &dir)?;
            let report = self.eval(kind, &dir, None)?;
            self.note(format!(
                "[{}] mean auc {:.4} mean top1 {:.4} ({:.0}s)",
                kind.name(),
                report.mean_auc,
                report.mean_top1,
                start.elapsed().as_secs_f64()
            ));
            let _ = writeln!(summary, "{},{},{}", kind.name(), report.mean_auc, report.mean_top1);
            reports.push(KindReport { kind, report });
        }
        write_file(&out.join("summary.csv"), &summary)?;
        Ok(reports)
    }
}

fn matrix_csv(m: &[Vec<f64>]) -> String {
    let mut out = String::from("true");
    for j in 0..m.len() {
        let _ = write!(out, ",pred{j}");
    }
    out.push('\n');
    for (i, row) in m.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn confusion_csv(m: &SplitMetrics) -> String {
    matrix_csv(&m.confusion.matrix)
}

/// `class,fpr,tpr` rows: the positive class for binary tasks, every
/// one-vs-rest curve otherwise.
fn roc_csv(preds: &PredictionSet) -> Result<String> {
    let classes: Vec<usize> = if preds.n_classes() == 2 { vec![1] } else { (0..preds.n_classes()).collect() };
    let mut out = String::from("class,fpr,tpr\n");
    for c in classes {
        let binary: Vec<usize> = preds.labels().iter().map(|&l| (l == c) as usize).collect();
        for (fpr, tpr) in roc_curve(&preds.class_scores(c), &binary)? {
            let _ = writeln!(out, "{c},{fpr},{tpr}");
        }
    }
    Ok(out)
}
