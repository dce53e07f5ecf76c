//! Exhaustive block matching and a hand-coded motion classifier built on it.
//!
//! Used only to cross-check the flow estimator and to show that synthetic
//! labels are recoverable from motion alone.

use alloc::vec::Vec;

use crate::flow::GrayImage;
use crate::synth::MotionClass;
use crate::training::Task;

/// Integer displacement of one block between two frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockVector {
    /// Block centre in pixels.
    pub x: f64,
    pub y: f64,
    pub dx: i32,
    pub dy: i32,
}

fn ssd(prev: &GrayImage, next: &GrayImage, x0: usize, y0: usize, bw: usize, bh: usize, dx: i32, dy: i32) -> f64 {
    let mut s = 0.0;
    for y in y0..y0 + bh {
        for x in x0..x0 + bw {
            let a = prev.data[y * prev.width + x];
            let (nx, ny) = ((x as i64 + dx as i64) as usize, (y as i64 + dy as i64) as usize);
            let d = a - next.data[ny * next.width + nx];
            s += d * d;
        }
    }
    s
}

/// Displacement in `[-radius, radius]^2` minimising the sum of squared
/// differences of the `bw x bh` block at `(x0, y0)`. Ties go to the smaller
/// displacement. The caller keeps every candidate inside the frame.
fn best_displacement(
    prev: &GrayImage,
    next: &GrayImage,
    x0: usize,
    y0: usize,
    bw: usize,
    bh: usize,
    radius: i32,
) -> (i32, i32) {
    let mut best = (f64::INFINITY, 0, (0, 0));
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let cost = ssd(prev, next, x0, y0, bw, bh, dx, dy);
            let norm = dx * dx + dy * dy;
            if cost < best.0 || (cost == best.0 && norm < best.1) {
                best = (cost, norm, (dx, dy));
            }
        }
    }
    best.2
}

/// Single displacement for the whole frame, excluding a `border` margin
/// (which must be at least `radius`).
pub fn global_shift(prev: &GrayImage, next: &GrayImage, border: usize, radius: i32) -> (i32, i32) {
    let border = border.max(radius as usize);
    let bw = prev.width - 2 * border;
    let bh = prev.height - 2 * border;
    best_displacement(prev, next, border, border, bw, bh, radius)
}

/// Displacements of non-overlapping `block x block` tiles whose search window
/// stays inside the frame.
pub fn block_field(prev: &GrayImage, next: &GrayImage, block: usize, radius: i32) -> Vec<BlockVector> {
    let r = radius as usize;
    let mut out = Vec::new();
    let mut y0 = r;
    while y0 + block + r <= prev.height {
        let mut x0 = r;
        while x0 + block + r <= prev.width {
            let (dx, dy) = best_displacement(prev, next, x0, y0, block, block, radius);
            out.push(BlockVector {
                x: x0 as f64 + block as f64 / 2.0,
                y: y0 as f64 + block as f64 / 2.0,
                dx,
                dy,
            });
            x0 += block;
        }
        y0 += block;
    }
    out
}

/// Motion summary over a run of frame pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionStats {
    /// Fraction of block vectors that are non-zero.
    pub moving_fraction: f64,
    /// Mean over pairs of the per-pair mean displacement magnitude per axis.
    pub mean_abs_dx: f64,
    pub mean_abs_dy: f64,
    /// Signed mean displacement over every moving block.
    pub mean_dx: f64,
    pub mean_dy: f64,
    /// Mean tangential (clockwise positive) and radial (outward positive)
    /// components about the moving-region centroid, per unit speed.
    pub curl: f64,
    pub divergence: f64,
}

/// Block-matching statistics over consecutive frame pairs.
pub fn motion_stats(frames: &[GrayImage], block: usize, radius: i32) -> MotionStats {
    let fields: Vec<Vec<BlockVector>> = frames.windows(2).map(|p| block_field(&p[0], &p[1], block, radius)).collect();
    let moving: Vec<&BlockVector> = fields.iter().flatten().filter(|b| b.dx != 0 || b.dy != 0).collect();
    let total = fields.iter().map(Vec::len).sum::<usize>().max(1);
    let mut stats = MotionStats {
        moving_fraction: moving.len() as f64 / total as f64,
        mean_abs_dx: 0.0,
        mean_abs_dy: 0.0,
        mean_dx: 0.0,
        mean_dy: 0.0,
        curl: 0.0,
        divergence: 0.0,
    };
    if moving.is_empty() {
        return stats;
    }
    let n = moving.len() as f64;
    let (cx, cy) = (moving.iter().map(|b| b.x).sum::<f64>() / n, moving.iter().map(|b| b.y).sum::<f64>() / n);
    let mut speed = 0.0;
    for b in &moving {
        let (dx, dy) = (b.dx as f64, b.dy as f64);
        stats.mean_dx += dx / n;
        stats.mean_dy += dy / n;
        speed += libm::sqrt(dx * dx + dy * dy) / n;
        let (rx, ry) = (b.x - cx, b.y - cy);
        let r = libm::sqrt(rx * rx + ry * ry);
        if r > 0.0 {
            stats.curl += (rx * dy - ry * dx) / r / n;
            stats.divergence += (rx * dx + ry * dy) / r / n;
        }
    }
    stats.curl /= speed;
    stats.divergence /= speed;
    for field in &fields {
        let m: Vec<&BlockVector> = field.iter().filter(|b| b.dx != 0 || b.dy != 0).collect();
        if m.is_empty() {
            continue;
        }
        let k = m.len() as f64;
        stats.mean_abs_dx += (m.iter().map(|b| b.dx as f64).sum::<f64>() / k).abs() / fields.len() as f64;
        stats.mean_abs_dy += (m.iter().map(|b| b.dy as f64).sum::<f64>() / k).abs() / fields.len() as f64;
    }
    stats
}

/// Hand-coded label rule: static clips are negative; otherwise divergence
/// marks expansion, curl marks rotation, and the dominant axis separates
/// horizontal translation (by sign) from vertical oscillation.
pub fn classify_motion(stats: &MotionStats, task: Task) -> usize {
    let moving = stats.moving_fraction > 0.05;
    match task {
        Task::Identification => moving as usize,
        Task::Classification => {
            let class = if stats.divergence > 0.5 {
                MotionClass::Expansion
            } else if stats.curl > 0.5 {
                MotionClass::Clockwise
            } else if stats.mean_abs_dx >= stats.mean_abs_dy {
                if stats.mean_dx >= 0.0 {
                    MotionClass::Rightward
                } else {
                    MotionClass::Leftward
                }
            } else {
                MotionClass::Oscillation
            };
            class.id()
        }
    }
}
