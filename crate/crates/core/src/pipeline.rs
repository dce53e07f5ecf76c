//! Clip to two-stream model input.
//!
//! Frames are windowed and decimated first. Flow is estimated between
//! consecutive kept frames at source resolution and encoded as RGB; the last
//! flow image is repeated so both streams have `T` frames. Both streams then
//! share one resize, one crop offset and the same standard scaling.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flow::{estimate_flow, flow_to_rgb, FlowConfig, FlowField, GrayImage};
use crate::rng::derive;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::{crop_offset, frames_to_tensor, temporal_indices, FrameSequence, Mode, PreprocessConfig, RgbImage};

/// Random access to the frames of one clip.
pub trait FrameSource {
    fn id(&self) -> &str;
    fn n_frames(&self) -> usize;
    fn fps(&self) -> f64;
    fn frame(&mut self, index: usize) -> Result<RgbImage>;
}

impl FrameSource for FrameSequence {
    fn id(&self) -> &str {
        self.source_id()
    }

    fn n_frames(&self) -> usize {
        self.len()
    }

    fn fps(&self) -> f64 {
        FrameSequence::fps(self)
    }

    fn frame(&mut self, index: usize) -> Result<RgbImage> {
        self.frames()
            .get(index)
            .cloned()
            .ok_or_else(|| Error::invalid("frame", alloc::format!("index {index} beyond {} frames", self.len())))
    }
}

/// Encoded flow images keyed by `(clip id, first frame, second frame)`.
/// Once `byte_limit` is reached new images are computed but not stored.
#[derive(Debug, Default, Clone)]
pub struct FlowCache {
    images: BTreeMap<(String, usize, usize), RgbImage>,
    bytes: usize,
    byte_limit: Option<usize>,
    pub hits: usize,
    pub misses: usize,
}

impl FlowCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_byte_limit(limit: usize) -> Self {
        FlowCache {
            byte_limit: Some(limit),
            ..Self::default()
        }
    }

    /// Pixel bytes held.
    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Flow between two RGB frames.
pub fn frame_flow(a: &RgbImage, b: &RgbImage, cfg: &FlowConfig) -> Result<FlowField> {
    estimate_flow(&GrayImage::from_rgb(a), &GrayImage::from_rgb(b), cfg)
}

/// Encoded flow for each kept frame: pairs `(t, t+1)`, last image repeated.
/// A single frame yields one zero-flow (white) image.
pub fn flow_images(frames: &[RgbImage], cfg: &FlowConfig) -> Result<Vec<RgbImage>> {
    let first = frames.first().ok_or_else(|| Error::invalid("flow_images", "no frames"))?;
    let mut out = Vec::with_capacity(frames.len());
    for pair in frames.windows(2) {
        out.push(flow_to_rgb(&frame_flow(&pair[0], &pair[1], cfg)?, cfg.encode_max_magnitude)?);
    }
    match out.last().cloned() {
        Some(last) => out.push(last),
        None => out.push(RgbImage::filled(first.width, first.height, [255, 255, 255])),
    }
    Ok(out)
}

/// Sampled frames of one clip with their source indices.
pub struct Sampled {
    pub indices: Vec<usize>,
    pub frames: Vec<RgbImage>,
}

pub fn sample_frames<F: FrameSource + ?Sized>(src: &mut F, pre: &PreprocessConfig, mode: Mode, seed: u64) -> Result<Sampled> {
    if src.n_frames() == 0 {
        return Err(Error::invalid("sample_frames", alloc::format!("clip {} has no frames", src.id())));
    }
    let indices = temporal_indices(src.n_frames(), src.fps(), pre, mode, derive(seed, "window", &[]));
    let frames = indices.iter().map(|&i| src.frame(i)).collect::<Result<Vec<_>>>()?;
    Ok(Sampled { indices, frames })
}

/// `[T, 3, h, w]` RGB and flow tensors for one clip. `seed` drives the
/// training-mode window and crop; evaluation uses the centred window and crop.
pub fn two_stream_inputs<S: Scalar, F: FrameSource + ?Sized>(
    src: &mut F,
    pre: &PreprocessConfig,
    flow: &FlowConfig,
    mode: Mode,
    seed: u64,
    cache: Option<&mut FlowCache>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let pre = pre.for_mode(mode);
    pre.validate()?;
    flow.validate()?;
    let sampled = sample_frames(src, &pre, mode, seed)?;
    let flows = match cache {
        None => flow_images(&sampled.frames, flow)?,
        Some(cache) => {
            let mut out = Vec::with_capacity(sampled.frames.len());
            for t in 1..sampled.frames.len() {
                let key = (String::from(src.id()), sampled.indices[t - 1], sampled.indices[t]);
                if let Some(img) = cache.images.get(&key) {
                    cache.hits += 1;
                    out.push(img.clone());
                } else {
                    cache.misses += 1;
                    let f = frame_flow(&sampled.frames[t - 1], &sampled.frames[t], flow)?;
                    let img = flow_to_rgb(&f, flow.encode_max_magnitude)?;
                    if cache.byte_limit.map_or(true, |l| cache.bytes + img.data.len() <= l) {
                        cache.bytes += img.data.len();
                        cache.images.insert(key, img.clone());
                    }
                    out.push(img);
                }
            }
            match out.last().cloned() {
                Some(last) => out.push(last),
                None => {
                    let f = &sampled.frames[0];
                    out.push(RgbImage::filled(f.width, f.height, [255, 255, 255]));
                }
            }
            out
        }
    };
    let offset = crop_offset(&pre, derive(seed, "crop", &[]));
    let rgb = frames_to_tensor(&sampled.frames, &pre, offset)?;
    let flow = frames_to_tensor(&flows, &pre, offset)?;
    Ok((rgb, flow))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_clip, plan_corpus, SynthSpec};

    fn clip() -> FrameSequence {
        let mut s = SynthSpec::classification([2; 5], 3);
        s.height = 32;
        s.width = 40;
        s.duration = (1.5, 1.5);
        let plans = plan_corpus(&s).unwrap();
        generate_clip(&plans[0], &s).unwrap().frames
    }

    fn pre() -> PreprocessConfig {
        PreprocessConfig {
            resize_to: (36, 36),
            crop_to: (32, 32),
            window_seconds: 1.0,
            ..PreprocessConfig::default()
        }
    }

    #[test]
    fn streams_have_equal_length() {
        let mut c = clip();
        let (r, f) = two_stream_inputs::<f32, _>(&mut c, &pre(), &FlowConfig::default(), Mode::Train, 4, None).unwrap();
        // 45 frames, 30-frame window, stride 4
        assert_eq!(r.shape(), &[8, 3, 32, 32]);
        assert_eq!(f.shape(), r.shape());
        let n = 3 * 32 * 32;
        assert_eq!(f.data()[6 * n..7 * n], f.data()[7 * n..8 * n]);
    }

    #[test]
    fn cache_does_not_change_inputs() {
        let mut c = clip();
        let cfg = FlowConfig::default();
        let mut cache = FlowCache::new();
        let plain = two_stream_inputs::<f32, _>(&mut c, &pre(), &cfg, Mode::Train, 9, None).unwrap();
        let cached = two_stream_inputs::<f32, _>(&mut c, &pre(), &cfg, Mode::Train, 9, Some(&mut cache)).unwrap();
        let again = two_stream_inputs::<f32, _>(&mut c, &pre(), &cfg, Mode::Train, 9, Some(&mut cache)).unwrap();
        assert_eq!(plain, cached);
        assert_eq!(plain, again);
        assert_eq!((cache.misses, cache.hits), (7, 7));

        let mut tiny = FlowCache::with_byte_limit(2 * 32 * 40 * 3);
        let limited = two_stream_inputs::<f32, _>(&mut c, &pre(), &cfg, Mode::Train, 9, Some(&mut tiny)).unwrap();
        assert_eq!(plain, limited);
        assert_eq!((tiny.len(), tiny.bytes()), (2, 2 * 32 * 40 * 3));
    }

    #[test]
    fn eval_mode_ignores_seed() {
        let mut c = clip();
        let cfg = FlowConfig::default();
        let a = two_stream_inputs::<f32, _>(&mut c, &pre(), &cfg, Mode::Eval, 1, None).unwrap();
        let b = two_stream_inputs::<f32, _>(&mut c, &pre(), &cfg, Mode::Eval, 2, None).unwrap();
        assert_eq!(a, b);
        let t = two_stream_inputs::<f32, _>(&mut c, &pre(), &cfg, Mode::Train, 2, None).unwrap();
        assert_ne!(a, t);
    }

    #[test]
    fn single_frame_gets_white_flow() {
        let f = flow_images(&clip().frames()[..1], &FlowConfig::default()).unwrap();
        assert_eq!(f.len(), 1);
        assert!(f[0].data.iter().all(|&b| b == 255));
    }
}
