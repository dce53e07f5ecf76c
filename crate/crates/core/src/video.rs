//! Frame sequences and the spatial/temporal preprocessing applied to clips.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 8-bit RGB image, interleaved, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidData(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Ordered frames of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<RgbImage>,
    fps: f64,
    source_id: String,
}

impl FrameSequence {
    /// Validates that all frames share one size and that `fps > 0`.
    pub fn new(frames: Vec<RgbImage>, fps: f64, source_id: impl Into<String>) -> Result<Self> {
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::InvalidData(format!("fps must be positive, got {fps}")));
        }
        if let Some(first) = frames.first() {
            if let Some((i, f)) = frames
                .iter()
                .enumerate()
                .find(|(_, f)| f.width != first.width || f.height != first.height)
            {
                return Err(Error::InvalidData(format!(
                    "frame {i} is {}x{}, expected {}x{}",
                    f.width, f.height, first.width, first.height
                )));
            }
        }
        Ok(FrameSequence {
            frames,
            fps,
            source_id: source_id.into(),
        })
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<RgbImage> {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    /// `(height, width)` of the frames, if any.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.height, f.width))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Random,
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Spatial and temporal preprocessing parameters. Sizes are `(height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub resize_to: (usize, usize),
    pub crop_to: (usize, usize),
    pub crop_mode: CropMode,
    pub temporal_stride: usize,
    pub window_seconds: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            resize_to: (240, 240),
            crop_to: (224, 224),
            crop_mode: CropMode::Random,
            temporal_stride: 4,
            window_seconds: 4.0,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("preprocess", d));
        if self.crop_to.0 > self.resize_to.0 || self.crop_to.1 > self.resize_to.1 {
            return bad(format!("crop {:?} larger than resize {:?}", self.crop_to, self.resize_to));
        }
        if self.crop_to.0 == 0 || self.crop_to.1 == 0 {
            return bad(format!("empty crop {:?}", self.crop_to));
        }
        if self.temporal_stride == 0 {
            return bad("temporal stride must be >= 1".into());
        }
        if !(self.window_seconds > 0.0) {
            return bad(format!("window must be positive, got {}", self.window_seconds));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("scaling deviations must be positive: {:?}", self.std));
        }
        Ok(())
    }

    /// Same configuration with the crop mode implied by `mode`.
    pub fn for_mode(&self, mode: Mode) -> Self {
        let mut c = self.clone();
        c.crop_mode = match mode {
            Mode::Train => CropMode::Random,
            Mode::Eval => CropMode::Center,
        };
        c
    }
}

/// Frame range covered by the sampling window.
///
/// Clips no longer than the window are used whole. Longer clips get a window
/// of `round(window_seconds * fps)` frames: uniformly placed in training,
/// centered in evaluation (where `seed` is ignored).
pub fn temporal_window(n_frames: usize, fps: f64, cfg: &PreprocessConfig, mode: Mode, seed: u64) -> Range<usize> {
    let duration = n_frames as f64 / fps;
    let window = libm::round(cfg.window_seconds * fps) as usize;
    if duration <= cfg.window_seconds || window >= n_frames || window == 0 {
        return 0..n_frames;
    }
    let slack = n_frames - window;
    let start = match mode {
        Mode::Train => rng_from(seed).gen_range(0..=slack),
        Mode::Eval => slack / 2,
    };
    start..start + window
}

/// Frame indices kept after windowing and stride decimation.
pub fn temporal_indices(n_frames: usize, fps: f64, cfg: &PreprocessConfig, mode: Mode, seed: u64) -> Vec<usize> {
    temporal_window(n_frames, fps, cfg, mode, seed)
        .step_by(cfg.temporal_stride.max(1))
        .collect()
}

/// Window sampling followed by decimation; output fps is `fps / stride`.
pub fn sample_temporal(seq: &FrameSequence, cfg: &PreprocessConfig, mode: Mode, seed: u64) -> Result<FrameSequence> {
    if seq.is_empty() {
        return Err(Error::invalid("sample_temporal", "empty sequence"));
    }
    let idx = temporal_indices(seq.len(), seq.fps(), cfg, mode, seed);
    let frames = idx.iter().map(|&i| seq.frames()[i].clone()).collect();
    FrameSequence::new(
        frames,
        seq.fps() / cfg.temporal_stride as f64,
        seq.source_id(),
    )
}

/// Top-left offset `(y, x)` of the crop inside the resized frame.
pub fn crop_offset(cfg: &PreprocessConfig, seed: u64) -> (usize, usize) {
    let dy = cfg.resize_to.0 - cfg.crop_to.0;
    let dx = cfg.resize_to.1 - cfg.crop_to.1;
    match cfg.crop_mode {
        CropMode::Center => (dy / 2, dx / 2),
        CropMode::Random => {
            let mut rng = rng_from(seed);
            (rng.gen_range(0..=dy), rng.gen_range(0..=dx))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

/// Bilinear source taps for `out` samples over `input` pixels, with pixel
/// centers at half-integer positions and edges clamped.
fn taps(input: usize, out: usize) -> Vec<Tap> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = libm::floor(src) as usize;
            let i1 = (i0 + 1).min(input - 1);
            Tap {
                i0,
                i1,
                frac: src - i0 as f64,
            }
        })
        .collect()
}

/// Bilinear resize of an interleaved `channels`-plane image.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, channels: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    resize_window(src, h, w, channels, (out_h, out_w), (0, 0), (out_h, out_w))
}

/// Resizes to `size` and returns only the `crop` window at `offset`.
fn resize_window(
    src: &[f64],
    h: usize,
    w: usize,
    channels: usize,
    size: (usize, usize),
    offset: (usize, usize),
    crop: (usize, usize),
) -> Vec<f64> {
    let ty = taps(h, size.0);
    let tx = taps(w, size.1);
    let mut out = Vec::with_capacity(crop.0 * crop.1 * channels);
    for y in offset.0..offset.0 + crop.0 {
        let t = ty[y];
        for x in offset.1..offset.1 + crop.1 {
            let s = tx[x];
            for c in 0..channels {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * channels + c];
                let top = at(t.i0, s.i0) * (1.0 - s.frac) + at(t.i0, s.i1) * s.frac;
                let bottom = at(t.i1, s.i0) * (1.0 - s.frac) + at(t.i1, s.i1) * s.frac;
                out.push(top * (1.0 - t.frac) + bottom * t.frac);
            }
        }
    }
    out
}

/// Resize, crop at `offset` and standard-scale frames into a `[T, 3, h, w]`
/// tensor.
pub fn frames_to_tensor<S: Scalar>(frames: &[RgbImage], cfg: &PreprocessConfig, offset: (usize, usize)) -> Result<Tensor<S>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("preprocess_spatial", "empty sequence"))?;
    if first.width < 2 || first.height < 2 {
        return Err(Error::invalid(
            "preprocess_spatial",
            format!("frames must be at least 2x2, got {}x{}", first.width, first.height),
        ));
    }
    let (ch, cw) = cfg.crop_to;
    let plane = ch * cw;
    let mut data = Vec::with_capacity(frames.len() * 3 * plane);
    for f in frames {
        let src: Vec<f64> = f.data.iter().map(|&b| b as f64).collect();
        let px = resize_window(&src, f.height, f.width, 3, cfg.resize_to, offset, cfg.crop_to);
        for c in 0..3 {
            let (mean, std) = (cfg.mean[c], cfg.std[c]);
            data.extend((0..plane).map(|i| S::from_f64((px[i * 3 + c] / 255.0 - mean) / std)));
        }
    }
    Tensor::from_vec(&[frames.len(), 3, ch, cw], data)
}

/// Bilinear resize to `resize_to`, one crop for the whole clip (random or
/// centered per `cfg.crop_mode`), then per-channel standard scaling.
pub fn preprocess_spatial<S: Scalar>(seq: &FrameSequence, cfg: &PreprocessConfig, seed: u64) -> Result<Tensor<S>> {
    cfg.validate()?;
    frames_to_tensor(seq.frames(), cfg, crop_offset(cfg, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn seq_of(n: usize, fps: f64) -> FrameSequence {
        let frames = (0..n)
            .map(|i| RgbImage::filled(4, 3, [i as u8, 0, 0]))
            .collect();
        FrameSequence::new(frames, fps, "t").unwrap()
    }

    #[test]
    fn sequence_validation() {
        let a = RgbImage::filled(4, 4, [0; 3]);
        let b = RgbImage::filled(5, 4, [0; 3]);
        let err = FrameSequence::new(vec![a.clone(), a.clone(), b], 30.0, "x").unwrap_err();
        assert!(format!("{err}").contains("frame 2"), "{err}");
        assert!(FrameSequence::new(vec![a], 0.0, "x").is_err());
    }

    #[test]
    fn duration_from_fps() {
        assert_eq!(seq_of(120, 30.0).duration(), 4.0);
    }

    #[test]
    fn four_second_clip_decimates_to_thirty_frames_at_7_5_hz() {
        let out = sample_temporal(&seq_of(120, 30.0), &PreprocessConfig::default(), Mode::Train, 1).unwrap();
        assert_eq!(out.len(), 30);
        assert_eq!(out.fps(), 7.5);
        let kept: Vec<u8> = out.frames().iter().map(|f| f.data[0]).collect();
        assert_eq!(kept, (0..120).step_by(4).map(|i| i as u8).collect::<Vec<_>>());
    }

    #[test]
    fn short_clip_is_used_whole() {
        let out = sample_temporal(&seq_of(12, 30.0), &PreprocessConfig::default(), Mode::Train, 9).unwrap();
        let kept: Vec<u8> = out.frames().iter().map(|f| f.data[0]).collect();
        assert_eq!(kept, vec![0, 4, 8]);
    }

    #[test]
    fn long_clip_window_is_reproducible() {
        let cfg = PreprocessConfig::default();
        let a = temporal_window(366, 30.0, &cfg, Mode::Train, 42);
        assert_eq!(a.len(), 120);
        assert!(a.end <= 366);
        assert_eq!(a, temporal_window(366, 30.0, &cfg, Mode::Train, 42));
        assert_eq!(temporal_indices(366, 30.0, &cfg, Mode::Train, 42).len(), 30);
        let e = temporal_window(366, 30.0, &cfg, Mode::Eval, 1);
        assert_eq!(e, 123..243);
        assert_eq!(e, temporal_window(366, 30.0, &cfg, Mode::Eval, 2));
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let empty = FrameSequence::new(vec![], 30.0, "e").unwrap();
        assert!(sample_temporal(&empty, &PreprocessConfig::default(), Mode::Eval, 0).is_err());
        assert!(preprocess_spatial::<f32>(&empty, &PreprocessConfig::default(), 0).is_err());
    }

    #[test]
    fn bilinear_two_by_two_to_three_by_three_center() {
        let out = resize_bilinear(&[0.0, 100.0, 100.0, 200.0], 2, 2, 1, 3, 3);
        assert_eq!(out[4], 100.0);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[8], 200.0);
    }

    #[test]
    fn center_crop_offset() {
        let cfg = PreprocessConfig::default().for_mode(Mode::Eval);
        assert_eq!(crop_offset(&cfg, 0), (8, 8));
        assert_eq!(crop_offset(&cfg, 99), (8, 8));
    }

    #[test]
    fn constant_frame_scales_to_per_channel_constant() {
        let seq = FrameSequence::new(vec![RgbImage::filled(7, 5, [51, 102, 153])], 30.0, "c").unwrap();
        let cfg = PreprocessConfig::default();
        let t = preprocess_spatial::<f64>(&seq, &cfg, 3).unwrap();
        assert_eq!(t.shape(), &[1, 3, 224, 224]);
        for c in 0..3 {
            let expect = ([51.0, 102.0, 153.0][c] / 255.0 - cfg.mean[c]) / cfg.std[c];
            let plane = &t.data()[c * 224 * 224..(c + 1) * 224 * 224];
            assert!(plane.iter().all(|&v| (v - expect).abs() < 1e-12));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = PreprocessConfig::default();
        cfg.crop_to = (250, 224);
        assert!(cfg.validate().is_err());
        let mut cfg = PreprocessConfig::default();
        cfg.temporal_stride = 0;
        assert!(cfg.validate().is_err());
    }
}
