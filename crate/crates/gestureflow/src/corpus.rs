//! Labelled clip corpora on disk: `manifest.csv` plus the clip files it names.
//!
//! ```text
//! path,label,duration,seed
//! clips/clip_00000.gfvs,0,7.3,1234
//! ```
//!
//! Paths are relative to the manifest's directory. `seed` is the generator
//! seed for synthetic clips and empty otherwise.

use std::path::{Path, PathBuf};

use gestureflow_core::synth::{generate_clip, plan_corpus, SynthSpec};
use gestureflow_core::training::LabeledClip;

use crate::error::{Error, Result};
use crate::formats::gfvs;
use crate::ingest::{open_clip, Clip};

pub const MANIFEST: &str = "manifest.csv";
const HEADER: [&str; 4] = ["path", "label", "duration", "seed"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub path: String,
    pub label: usize,
    pub duration: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    w.write_record(HEADER).map_err(Error::csv(path))?;
    for r in rows {
        let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([r.path.as_str(), &r.label.to_string(), &r.duration.to_string(), &seed])
            .map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    let header = r.headers().map_err(Error::csv(path))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::format(path, format!("header must be {}", HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(Error::csv(path))?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let bad = |k: usize| Error::format(path, format!("line {line}: bad {} {:?}", HEADER[k], field(k)));
        let seed = match field(3) {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(3))?),
        };
        rows.push(ManifestRow {
            path: field(0).to_string(),
            label: field(1).parse().map_err(|_| bad(1))?,
            duration: field(2).parse().map_err(|_| bad(2))?,
            seed,
        });
    }
    Ok(rows)
}

/// Renders the corpus described by `spec` into `dir` and returns it.
pub fn generate_corpus(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let clips = dir.join("clips");
    std::fs::create_dir_all(&clips).map_err(Error::io(&clips))?;
    let mut rows = Vec::with_capacity(spec.total());
    for plan in plan_corpus(spec)? {
        let clip = generate_clip(&plan, spec)?;
        let rel = format!("clips/{}.gfvs", clip.frames.source_id());
        gfvs::write(dir.join(&rel), &clip.frames)?;
        rows.push(ManifestRow {
            path: rel,
            label: plan.label,
            duration: clip.frames.duration(),
            seed: Some(plan.seed),
        });
    }
    write_manifest(&dir.join(MANIFEST), &rows)?;
    Ok(Corpus { dir: dir.to_path_buf(), rows })
}

impl Corpus {
    /// Reads `dir/manifest.csv` and checks that every clip it names exists.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = dir.join(MANIFEST);
        if !manifest.is_file() {
            return Err(Error::format(dir, format!("no corpus here ({MANIFEST} not found)")));
        }
        let rows = read_manifest(&manifest)?;
        if rows.is_empty() {
            return Err(Error::format(&manifest, "corpus is empty"));
        }
        for r in &rows {
            let p = dir.join(&r.path);
            if !p.exists() {
                return Err(Error::format(&manifest, format!("clip {} does not exist", r.path)));
            }
        }
        Ok(Corpus { dir: dir.to_path_buf(), rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn clip_path(&self, index: usize) -> PathBuf {
        self.dir.join(&self.rows[index].path)
    }

    pub fn open(&self, index: usize) -> Result<Clip> {
        open_clip(self.clip_path(index))
    }

    /// Fails when a label does not fit `n_classes`.
    pub fn labeled(&self, n_classes: usize) -> Result<Vec<LabeledClip>> {
        self.rows
            .iter()
            .map(|r| {
                if r.label >= n_classes {
                    return Err(Error::format(
                        self.dir.join(MANIFEST),
                        format!("clip {} has label {} but the task has {n_classes} classes", r.path, r.label),
                    ));
                }
                Ok(LabeledClip {
                    id: r.path.clone(),
                    label: r.label,
                    duration: r.duration,
                })
            })
            .collect()
    }
}
