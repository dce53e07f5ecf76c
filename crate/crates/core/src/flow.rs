//! Coarse-to-fine Horn–Schunck optical flow and HSV flow encoding.
//!
//! The estimator works on `[0, 1]` grayscale intensities. At each pyramid level
//! the second frame is warped by the current flow estimate and Jacobi
//! Horn–Schunck iterations solve for the total flow, linearised around that
//! estimate. With a zero estimate the update is the textbook
//! `u <- u_avg - Ix (Ix u_avg + Iy v_avg + It) / (alpha^2 + Ix^2 + Iy^2)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::video::RgbImage;

/// Single-channel image with `f64` intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(Error::InvalidData(format!(
                "{width}x{height} image with {} values",
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Luma conversion (0.299 R + 0.587 G + 0.114 B) scaled to `[0, 1]`.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let data = img
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
            .collect();
        GrayImage {
            width: img.width,
            height: img.height,
            data,
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Horizontal mirror image.
    pub fn mirrored(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        GrayImage { data, ..*self }
    }
}

/// Per-pixel displacement in pixels per frame: `u` rightward, `v` downward.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    /// Mean `(u, v)` over pixels at least `border` away from every edge.
    pub fn interior_mean(&self, border: usize) -> (f64, f64) {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for y in border..self.height.saturating_sub(border) {
            for x in border..self.width.saturating_sub(border) {
                su += self.u[y * self.width + x];
                sv += self.v[y * self.width + x];
                n += 1;
            }
        }
        if n == 0 {
            return (0.0, 0.0);
        }
        (su / n as f64, sv / n as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Smoothness weight on the `[0, 1]` intensity scale.
    pub alpha: f64,
    /// Jacobi iterations per pyramid level.
    pub iterations: usize,
    pub pyramid_levels: usize,
    /// Flow magnitude (pixels/frame) encoded as full saturation.
    pub encode_max_magnitude: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            // 15 on the 8-bit intensity scale.
            alpha: 15.0 / 255.0,
            iterations: 100,
            pyramid_levels: 3,
            encode_max_magnitude: 8.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("flow", format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.iterations == 0 || self.pyramid_levels == 0 {
            return Err(Error::invalid("flow", "iterations and pyramid_levels must be >= 1"));
        }
        if !(self.encode_max_magnitude > 0.0) {
            return Err(Error::invalid("flow", "encode_max_magnitude must be positive"));
        }
        Ok(())
    }
}

fn downsample(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width.div_ceil(2), img.height.div_ceil(2));
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (x0, y0) = (2 * x as isize, 2 * y as isize);
            data.push(0.25 * (img.at(x0, y0) + img.at(x0 + 1, y0) + img.at(x0, y0 + 1) + img.at(x0 + 1, y0 + 1)));
        }
    }
    GrayImage {
        width: w,
        height: h,
        data,
    }
}

fn bilinear(data: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (libm::floor(x) as usize, libm::floor(y) as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = data[y0 * w + x0] * (1.0 - fx) + data[y0 * w + x1] * fx;
    let bottom = data[y1 * w + x0] * (1.0 - fx) + data[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples a flow component onto a finer grid, scaling it by `gain`.
fn upsample(src: &[f64], sw: usize, sh: usize, w: usize, h: usize, gain: f64) -> Vec<f64> {
    let (sx, sy) = (sw as f64 / w as f64, sh as f64 / h as f64);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..w {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            out.push(gain * bilinear(src, sw, sh, fx, fy));
        }
    }
    out
}

/// 4-neighbour mean with replicated borders.
fn neighbour_mean(f: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        let up = if y == 0 { 0 } else { y - 1 };
        let down = if y + 1 == h { y } else { y + 1 };
        for x in 0..w {
            let left = if x == 0 { 0 } else { x - 1 };
            let right = if x + 1 == w { x } else { x + 1 };
            out[y * w + x] = 0.25 * ((f[y * w + left] + f[y * w + right]) + (f[up * w + x] + f[down * w + x]));
        }
    }
}

fn refine(prev: &GrayImage, next: &GrayImage, u0: &[f64], v0: &[f64], cfg: &FlowConfig) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (prev.width, prev.height);
    let n = w * h;
    let mut warped = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            warped.push(bilinear(&next.data, w, h, x as f64 + u0[i], y as f64 + v0[i]));
        }
    }
    let warped = GrayImage {
        width: w,
        height: h,
        data: warped,
    };
    let (mut ix, mut iy, mut it) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let dx = |g: &GrayImage| 0.5 * (g.at(x + 1, y) - g.at(x - 1, y));
            let dy = |g: &GrayImage| 0.5 * (g.at(x, y + 1) - g.at(x, y - 1));
            ix[i] = 0.5 * (dx(prev) + dx(&warped));
            iy[i] = 0.5 * (dy(prev) + dy(&warped));
            it[i] = warped.data[i] - prev.data[i];
        }
    }
    let a2 = cfg.alpha * cfg.alpha;
    let denom: Vec<f64> = ix.iter().zip(&iy).map(|(gx, gy)| a2 + gx * gx + gy * gy).collect();
    let (mut u, mut v) = (u0.to_vec(), v0.to_vec());
    let (mut ub, mut vb) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..cfg.iterations {
        neighbour_mean(&u, w, h, &mut ub);
        neighbour_mean(&v, w, h, &mut vb);
        for i in 0..n {
            let r = (ix[i] * (ub[i] - u0[i]) + iy[i] * (vb[i] - v0[i]) + it[i]) / denom[i];
            u[i] = ub[i] - ix[i] * r;
            v[i] = vb[i] - iy[i] * r;
        }
    }
    (u, v)
}

/// Dense flow from `prev` to `next`.
pub fn estimate_flow(prev: &GrayImage, next: &GrayImage, cfg: &FlowConfig) -> Result<FlowField> {
    cfg.validate()?;
    if prev.width != next.width || prev.height != next.height {
        return Err(Error::shape(
            "estimate_flow",
            format!(
                "frames are {}x{} and {}x{}",
                prev.width, prev.height, next.width, next.height
            ),
        ));
    }
    let mut pyramid = vec![(prev.clone(), next.clone())];
    while pyramid.len() < cfg.pyramid_levels {
        let (p, q) = pyramid.last().expect("non-empty");
        if p.width < 8 || p.height < 8 {
            break;
        }
        let level = (downsample(p), downsample(q));
        pyramid.push(level);
    }

    let (cp, _) = pyramid.last().expect("non-empty");
    let (mut w, mut h) = (cp.width, cp.height);
    let (mut u, mut v) = (vec![0.0; w * h], vec![0.0; w * h]);
    for (p, q) in pyramid.iter().rev() {
        if p.width != w || p.height != h {
            u = upsample(&u, w, h, p.width, p.height, p.width as f64 / w as f64);
            v = upsample(&v, w, h, p.width, p.height, p.height as f64 / h as f64);
            w = p.width;
            h = p.height;
        }
        let (nu, nv) = refine(p, q, &u, &v, cfg);
        u = nu;
        v = nv;
    }
    Ok(FlowField {
        width: w,
        height: h,
        u,
        v,
    })
}

fn quantize(x: f64) -> u8 {
    libm::floor(x * 255.0 + 0.5).clamp(0.0, 255.0) as u8
}

/// HSV to 8-bit RGB with the sextant formula; `hue` in degrees `[0, 360)`.
pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [u8; 3] {
    let c = val * sat;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match libm::floor(hp) as i64 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [quantize(r + m), quantize(g + m), quantize(b + m)]
}

/// Hue in degrees for the direction of `(u, v)`, in `[0, 360)`.
pub fn flow_hue(u: f64, v: f64) -> f64 {
    let mut deg = libm::atan2(v, u).to_degrees();
    if deg < 0.0 {
        deg += 360.0;
    }
    // Snap away last-bit noise so axis directions land exactly on 90/180/270.
    deg = libm::round(deg * 1e9) / 1e9;
    if deg >= 360.0 {
        deg -= 360.0;
    }
    deg
}

/// Encodes flow as an image: hue is direction, saturation is magnitude
/// relative to `max_mag` (capped at 1), value is 1.
pub fn flow_to_rgb(flow: &FlowField, max_mag: f64) -> Result<RgbImage> {
    if !(max_mag > 0.0) {
        return Err(Error::invalid("flow_to_rgb", format!("max magnitude must be positive, got {max_mag}")));
    }
    let mut data = Vec::with_capacity(flow.u.len() * 3);
    for (&u, &v) in flow.u.iter().zip(&flow.v) {
        let sat = (libm::sqrt(u * u + v * v) / max_mag).min(1.0);
        data.extend_from_slice(&hsv_to_rgb(flow_hue(u, v), sat, 1.0));
    }
    RgbImage::new(flow.width, flow.height, data)
}
