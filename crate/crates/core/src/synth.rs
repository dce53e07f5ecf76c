//! Deterministic synthetic gesture corpus.
//!
//! Each clip shows a static textured background with a textured disk. Inside
//! the disk the texture follows one of five motion programs; the disk outline
//! itself stays put, so a clip of any length stays seamless. Negative clips
//! keep the disk texture still and only carry per-frame pixel noise.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{derive, rng_from, Rng};
use crate::training::Task;
use crate::video::{FrameSequence, RgbImage};

/// Periodic value-noise texture with smoothstep interpolation.
#[derive(Debug, Clone)]
pub struct ValueNoise {
    lattice: Vec<f64>,
    period: usize,
    cell: f64,
}

impl ValueNoise {
    pub fn new(seed: u64, period: usize, cell: f64) -> Self {
        let mut rng = rng_from(seed);
        let lattice = (0..period * period).map(|_| rng.gen::<f64>()).collect();
        ValueNoise { lattice, period, cell }
    }

    /// Texture value in `[0, 1]` at a continuous position (pixels).
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = (x / self.cell, y / self.cell);
        let (x0, y0) = (libm::floor(fx), libm::floor(fy));
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(fx - x0), smooth(fy - y0));
        let p = self.period as i64;
        let g = |a: i64, b: i64| self.lattice[(b.rem_euclid(p) * p + a.rem_euclid(p)) as usize];
        let (x0, y0) = (x0 as i64, y0 as i64);
        let top = g(x0, y0) * (1.0 - tx) + g(x0 + 1, y0) * tx;
        let bottom = g(x0, y0 + 1) * (1.0 - tx) + g(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Motion program of a positive clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionClass {
    Rightward = 0,
    Leftward = 1,
    Clockwise = 2,
    Expansion = 3,
    Oscillation = 4,
}

impl MotionClass {
    pub const ALL: [MotionClass; 5] = [
        MotionClass::Rightward,
        MotionClass::Leftward,
        MotionClass::Clockwise,
        MotionClass::Expansion,
        MotionClass::Oscillation,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        MotionClass::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid("motion class", format!("id {id} outside 0..5")))
    }
}

/// What a clip depicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClipKind {
    Negative,
    Motion(MotionClass),
}

impl ClipKind {
    pub fn label(self, task: Task) -> Result<usize> {
        match (task, self) {
            (Task::Identification, ClipKind::Negative) => Ok(0),
            (Task::Identification, ClipKind::Motion(_)) => Ok(1),
            (Task::Classification, ClipKind::Motion(m)) => Ok(m.id()),
            (Task::Classification, ClipKind::Negative) => {
                Err(Error::invalid("synth", "classification corpora have no negative clips"))
            }
        }
    }
}

/// Oscillation period in frames (one second at 30 fps).
const OSCILLATION_PERIOD: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub task: Task,
    /// Clip count per label (index = label).
    pub counts: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    /// Clip duration range in seconds.
    pub duration: (f64, f64),
    /// Motion speed range in pixels per source frame.
    pub speed: (f64, f64),
    /// Additive Gaussian pixel noise, 8-bit units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn base(task: Task, counts: Vec<usize>, seed: u64) -> Self {
        SynthSpec {
            task,
            counts,
            height: 240,
            width: 320,
            fps: 30.0,
            duration: (5.0, 13.0),
            speed: (1.0, 3.0),
            noise_sigma: 3.0,
            seed,
        }
    }

    /// Identification corpus: `negatives` clips labelled 0, `positives` labelled 1.
    pub fn identification(positives: usize, negatives: usize, seed: u64) -> Self {
        Self::base(Task::Identification, alloc::vec![negatives, positives], seed)
    }

    pub fn classification(counts: [usize; 5], seed: u64) -> Self {
        Self::base(Task::Classification, counts.to_vec(), seed)
    }

    /// Classification corpus with the reference class profile
    /// (150, 101, 96, 117, 47) divided by `divisor`, rounded half up.
    pub fn classification_scaled(divisor: f64, seed: u64) -> Self {
        let counts = REFERENCE_CLASS_COUNTS.map(|c| libm::floor(c as f64 / divisor + 0.5) as usize);
        Self::classification(counts, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != self.task.n_classes() {
            return Err(Error::InvalidSpec(format!(
                "{} corpus needs {} class counts, got {}",
                self.task.name(),
                self.task.n_classes(),
                self.counts.len()
            )));
        }
        if let Some(c) = self.counts.iter().position(|&n| n < 2) {
            return Err(Error::InvalidSpec(format!("class {c} needs at least 2 clips")));
        }
        if !(self.duration.0 > 0.0 && self.duration.1 >= self.duration.0) {
            return Err(Error::InvalidSpec(format!("duration range {:?} must be positive", self.duration)));
        }
        if !(self.speed.0 >= 0.0 && self.speed.1 >= self.speed.0) {
            return Err(Error::InvalidSpec(format!("speed range {:?} is invalid", self.speed)));
        }
        if !(self.fps > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidSpec("fps must be positive and noise_sigma non-negative".into()));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidSpec(format!("resolution {}x{} below 16x16", self.height, self.width)));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Per-class clip counts of the reference classification corpus.
pub const REFERENCE_CLASS_COUNTS: [usize; 5] = [150, 101, 96, 117, 47];

/// One planned clip of a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipPlan {
    pub index: usize,
    pub kind: ClipKind,
    pub label: usize,
    pub seed: u64,
}

/// Every clip of the corpus described by `spec`, ordered by label then index.
pub fn plan_corpus(spec: &SynthSpec) -> Result<Vec<ClipPlan>> {
    spec.validate()?;
    let mut plans = Vec::with_capacity(spec.total());
    let mut seen = alloc::collections::BTreeSet::new();
    for (label, &count) in spec.counts.iter().enumerate() {
        for _ in 0..count {
            let index = plans.len();
            let mut seed = derive(spec.seed, "clip", &[index as u64]);
            let mut bump = 0u64;
            while !seen.insert(seed) {
                bump += 1;
                seed = derive(spec.seed, "clip", &[index as u64, bump]);
            }
            let kind = match spec.task {
                Task::Identification if label == 0 => ClipKind::Negative,
                Task::Identification => {
                    let m = (derive(seed, "motion", &[]) % 5) as usize;
                    ClipKind::Motion(MotionClass::from_id(m)?)
                }
                Task::Classification => ClipKind::Motion(MotionClass::from_id(label)?),
            };
            plans.push(ClipPlan { index, kind, label, seed });
        }
    }
    Ok(plans)
}

/// A generated clip with the ground truth used to render it.
#[derive(Debug, Clone)]
pub struct SynthClip {
    pub frames: FrameSequence,
    pub kind: ClipKind,
    /// Pixels per source frame.
    pub speed: f64,
    /// Disk centre `(x, y)` and radius in pixels.
    pub disk: (f64, f64, f64),
}

fn gaussian(rng: &mut Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
}

/// Foreground texture coordinates at offset `(dx, dy)` from the disk centre,
/// frame `t`. Returns the texture value.
fn foreground_value(
    kind: ClipKind,
    tex: &ValueNoise,
    polar: &ValueNoise,
    dx: f64,
    dy: f64,
    t: f64,
    speed: f64,
    radius: f64,
) -> f64 {
    let m = match kind {
        ClipKind::Negative => return tex.sample(dx, dy),
        ClipKind::Motion(m) => m,
    };
    match m {
        MotionClass::Rightward => tex.sample(dx - speed * t, dy),
        MotionClass::Leftward => tex.sample(dx + speed * t, dy),
        MotionClass::Clockwise => {
            // rim speed equals `speed`; y points down so a positive angle is clockwise
            let a = -speed / radius * t;
            let (s, c) = (libm::sin(a), libm::cos(a));
            tex.sample(c * dx - s * dy, s * dx + c * dy)
        }
        MotionClass::Expansion => {
            let r = libm::sqrt(dx * dx + dy * dy);
            let theta = libm::atan2(dy, dx);
            // angular lattice wraps exactly once around the circle
            let around = (theta + PI) / (2.0 * PI) * polar.period as f64 * polar.cell;
            polar.sample(around, r - speed * t)
        }
        MotionClass::Oscillation => {
            let amp = speed * OSCILLATION_PERIOD / (2.0 * PI);
            tex.sample(dx, dy - amp * libm::sin(2.0 * PI * t / OSCILLATION_PERIOD))
        }
    }
}

/// Renders the clip planned by `plan`.
pub fn generate_clip(plan: &ClipPlan, spec: &SynthSpec) -> Result<SynthClip> {
    spec.validate()?;
    let seed = plan.seed;
    let mut rng = rng_from(derive(seed, "clip-params", &[]));
    let duration = spec.duration.0 + (spec.duration.1 - spec.duration.0) * rng.gen::<f64>();
    let n_frames = (libm::round(duration * spec.fps) as usize).max(1);
    let speed = spec.speed.0 + (spec.speed.1 - spec.speed.0) * rng.gen::<f64>();
    let (h, w) = (spec.height as f64, spec.width as f64);
    let radius = 0.35 * h.min(w);
    let cx = radius + (w - 2.0 * radius) * rng.gen::<f64>();
    let cy = radius + (h - 2.0 * radius) * rng.gen::<f64>();
    let cell = (h.min(w) / 12.0).max(3.0);
    let background = ValueNoise::new(derive(seed, "background", &[]), 32, cell);
    let tex = ValueNoise::new(derive(seed, "foreground", &[]), 32, cell * 0.75);
    let polar = ValueNoise::new(derive(seed, "polar", &[]), 16, cell * 0.75);

    let mut base = Vec::with_capacity(spec.height * spec.width * 3);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let b = background.sample(x as f64, y as f64);
            base.extend_from_slice(&[60.0 + 90.0 * b, 50.0 + 60.0 * b, 45.0 + 50.0 * b]);
        }
    }

    let mut noise_rng = rng_from(derive(seed, "noise", &[]));
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let mut data = Vec::with_capacity(base.len());
        for y in 0..spec.height {
            for x in 0..spec.width {
                let i = (y * spec.width + x) * 3;
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let rgb = if dx * dx + dy * dy <= radius * radius {
                    let f = foreground_value(plan.kind, &tex, &polar, dx, dy, t as f64, speed, radius);
                    [40.0 + 200.0 * f, 30.0 + 150.0 * f, 40.0 + 140.0 * f]
                } else {
                    [base[i], base[i + 1], base[i + 2]]
                };
                for c in rgb {
                    let v = c + spec.noise_sigma * gaussian(&mut noise_rng);
                    data.push(libm::round(v).clamp(0.0, 255.0) as u8);
                }
            }
        }
        frames.push(RgbImage::new(spec.width, spec.height, data)?);
    }
    let frames = FrameSequence::new(frames, spec.fps, format!("clip_{:05}", plan.index))?;
    Ok(SynthClip {
        frames,
        kind: plan.kind,
        speed,
        disk: (cx, cy, radius),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: Task) -> SynthSpec {
        let mut s = match task {
            Task::Identification => SynthSpec::identification(3, 3, 4),
            Task::Classification => SynthSpec::classification([2; 5], 4),
        };
        s.height = 32;
        s.width = 40;
        s.duration = (0.2, 0.3);
        s
    }

    #[test]
    fn scaled_reference_counts() {
        let s = SynthSpec::classification_scaled(5.0, 0);
        assert_eq!(s.counts, [30, 20, 19, 23, 9]);
    }

    #[test]
    fn plans_have_unique_seeds_and_exact_counts() {
        let s = SynthSpec::identification(40, 40, 9);
        let p = plan_corpus(&s).unwrap();
        assert_eq!(p.len(), 80);
        assert_eq!(p.iter().filter(|c| c.label == 1).count(), 40);
        let mut seeds: Vec<u64> = p.iter().map(|c| c.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 80);
        assert!(p.iter().all(|c| (c.label == 0) == (c.kind == ClipKind::Negative)));
    }

    #[test]
    fn generation_is_deterministic() {
        let s = small(Task::Classification);
        let p = plan_corpus(&s).unwrap();
        let a = generate_clip(&p[3], &s).unwrap();
        let b = generate_clip(&p[3], &s).unwrap();
        assert_eq!(a.frames, b.frames);
        assert!(a.frames.len() >= 6 && a.frames.len() <= 9);
        let c = generate_clip(&p[4], &s).unwrap();
        assert_ne!(a.frames.frames()[0], c.frames.frames()[0]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small(Task::Identification);
        s.counts = alloc::vec![1, 3];
        assert!(plan_corpus(&s).is_err());
        let mut s = small(Task::Classification);
        s.counts.pop();
        assert!(plan_corpus(&s).is_err());
        assert!(ClipKind::Negative.label(Task::Classification).is_err());
    }

    fn gray(clip: &SynthClip) -> Vec<crate::flow::GrayImage> {
        clip.frames.frames().iter().map(crate::flow::GrayImage::from_rgb).collect()
    }

    fn disk_vectors(clip: &SynthClip) -> Vec<crate::oracle::BlockVector> {
        let (cx, cy, r) = clip.disk;
        let g = gray(clip);
        g.windows(2)
            .flat_map(|p| crate::oracle::block_field(&p[0], &p[1], 6, 3))
            .filter(|b| {
                let (dx, dy) = (b.x - cx, b.y - cy);
                libm::sqrt(dx * dx + dy * dy) + 4.5 < r
            })
            .collect()
    }

    #[test]
    fn rightward_clip_moves_two_pixels_per_frame() {
        let mut s = SynthSpec::classification([2; 5], 11);
        s.height = 60;
        s.width = 80;
        s.duration = (0.3, 0.3);
        s.speed = (2.0, 2.0);
        for plan in plan_corpus(&s).unwrap().iter().filter(|p| p.label == 0) {
            let clip = generate_clip(plan, &s).unwrap();
            let v = disk_vectors(&clip);
            assert!(v.len() > 10);
            let n = v.len() as f64;
            let mx = v.iter().map(|b| b.dx as f64).sum::<f64>() / n;
            let my = v.iter().map(|b| b.dy as f64).sum::<f64>() / n;
            assert!((mx - 2.0).abs() < 0.5 && my.abs() < 0.5, "({mx}, {my})");
        }
    }

    #[test]
    fn negative_clip_has_zero_median_displacement() {
        let mut s = SynthSpec::identification(2, 2, 12);
        s.height = 60;
        s.width = 80;
        s.duration = (0.3, 0.3);
        for plan in plan_corpus(&s).unwrap().iter().filter(|p| p.label == 0) {
            let clip = generate_clip(plan, &s).unwrap();
            let g = gray(&clip);
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for p in g.windows(2) {
                for b in crate::oracle::block_field(&p[0], &p[1], 6, 3) {
                    xs.push(b.dx);
                    ys.push(b.dy);
                }
            }
            xs.sort();
            ys.sort();
            assert_eq!((xs[xs.len() / 2], ys[ys.len() / 2]), (0, 0));
        }
    }

    #[test]
    fn labels_are_recoverable_from_block_matching() {
        for task in [Task::Classification, Task::Identification] {
            let mut s = match task {
                Task::Classification => SynthSpec::classification([12; 5], 21),
                Task::Identification => SynthSpec::identification(30, 30, 22),
            };
            s.height = 48;
            s.width = 64;
            s.duration = (0.5, 0.5);
            let plans = plan_corpus(&s).unwrap();
            let mut correct = 0;
            for plan in &plans {
                let clip = generate_clip(plan, &s).unwrap();
                let stats = crate::oracle::motion_stats(&gray(&clip), 6, 3);
                if crate::oracle::classify_motion(&stats, task) == plan.label {
                    correct += 1;
                }
            }
            let acc = correct as f64 / plans.len() as f64;
            assert!(acc >= 0.95, "{task:?} accuracy {acc}");
        }
    }
}
