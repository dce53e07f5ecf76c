//! Forward and backward kernels over raw slices.
//!
//! Layouts are row-major: images are `[C, H, W]`, convolution weights
//! `[C_out, C_in, k, k]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.oh * self.ow
    }
}

fn im2col<S: Scalar>(x: &[S], g: &ConvGeom, col: &mut [S]) {
    let p = g.out_pixels();
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(S::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            S::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<S: Scalar>(col: &[S], g: &ConvGeom, dx: &mut [S]) {
    let p = g.out_pixels();
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution over `batch` images stored back to back in `x`.
pub(crate) fn conv2d_forward<S: Scalar>(
    x: &[S],
    weight: &[S],
    bias: &[S],
    g: &ConvGeom,
    batch: usize,
) -> Vec<S> {
    let (kk, p) = (g.patch_len(), g.out_pixels());
    let mut out = vec![S::ZERO; batch * g.out_len()];
    let mut col = vec![S::ZERO; kk * p];
    for n in 0..batch {
        im2col(&x[n * g.in_len()..(n + 1) * g.in_len()], g, &mut col);
        let o = &mut out[n * g.out_len()..(n + 1) * g.out_len()];
        for (co, row) in o.chunks_exact_mut(p).enumerate() {
            row.fill(bias[co]);
        }
        S::gemm(
            g.c_out, kk, p, S::ONE, weight, kk as isize, 1, &col, p as isize, 1, S::ONE, o,
            p as isize, 1,
        );
    }
    out
}

pub(crate) struct ConvGrads<S> {
    pub dx: Option<Vec<S>>,
    pub dw: Vec<S>,
    pub db: Vec<S>,
}

pub(crate) fn conv2d_backward<S: Scalar>(
    x: &[S],
    weight: &[S],
    gout: &[S],
    g: &ConvGeom,
    batch: usize,
    need_dx: bool,
) -> ConvGrads<S> {
    let (kk, p) = (g.patch_len(), g.out_pixels());
    let mut col = vec![S::ZERO; kk * p];
    let mut dcol = if need_dx { vec![S::ZERO; kk * p] } else { Vec::new() };
    let mut dx = if need_dx {
        Some(vec![S::ZERO; batch * g.in_len()])
    } else {
        None
    };
    let mut dw = vec![S::ZERO; g.c_out * kk];
    let mut db = vec![S::ZERO; g.c_out];
    for n in 0..batch {
        let go = &gout[n * g.out_len()..(n + 1) * g.out_len()];
        for (co, row) in go.chunks_exact(p).enumerate() {
            db[co] += row.iter().copied().sum::<S>();
        }
        im2col(&x[n * g.in_len()..(n + 1) * g.in_len()], g, &mut col);
        // dW += gout [C_out, P] * col^T [P, K]
        S::gemm(
            g.c_out, p, kk, S::ONE, go, p as isize, 1, &col, 1, p as isize, S::ONE, &mut dw,
            kk as isize, 1,
        );
        if let Some(dx) = dx.as_mut() {
            // dcol = W^T [K, C_out] * gout [C_out, P]
            S::gemm(
                kk, g.c_out, p, S::ONE, weight, 1, kk as isize, go, p as isize, 1, S::ZERO,
                &mut dcol, p as isize, 1,
            );
            col2im(&dcol, g, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Max pooling without padding over `planes` independent `h x w` planes.
///
/// Returns the pooled values and, per output element, the flat input index of
/// the first maximum in row-major window order.
pub(crate) fn max_pool_forward<S: Scalar>(
    x: &[S],
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
) -> (Vec<S>, Vec<usize>) {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + oy * stride * w + ox * stride;
                let mut best = x[best_i];
                for ky in 0..k {
                    for kx in 0..k {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}
