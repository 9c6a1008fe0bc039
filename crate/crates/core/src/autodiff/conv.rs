//! Convolution and windowed means, lowered to matrix products.

use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
}

impl Dims {
    fn of(x: &Tensor, w: &Tensor) -> Result<Self> {
        if x.shape.len() != 4 || w.shape.len() != 4 || x.shape[1] != w.shape[1] {
            return Err(Error::Dimension(format!("conv2d input {:?} with kernel {:?}", x.shape, w.shape)));
        }
        let (kh, kw) = (w.shape[2], w.shape[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Dimension(format!("conv2d kernels must be odd-sized, got {kh}x{kw}")));
        }
        Ok(Self { n: x.shape[0], c: x.shape[1], h: x.shape[2], w: x.shape[3], o: w.shape[0], kh, kw })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Columns `x_lo..x_hi` of the output plane that read an in-bounds source for
/// tap offset `dj`.
fn valid(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

/// Writes sample `s` of `x` into the `[patch, N·H·W]` batch columns.
fn im2col(d: &Dims, x: &[f64], s: usize, cols: &mut [f64]) {
    let hw = d.plane();
    for c in 0..d.c {
        let plane = &x[c * hw..(c + 1) * hw];
        for i in 0..d.kh {
            let di = i as isize - (d.kh / 2) as isize;
            let (ylo, yhi) = valid(d.h, di);
            for j in 0..d.kw {
                let dj = j as isize - (d.kw / 2) as isize;
                let (xlo, xhi) = valid(d.w, dj);
                let row = (c * d.kh + i) * d.kw + j;
                let dst = &mut cols[(row * d.n + s) * hw..(row * d.n + s + 1) * hw];
                for y in 0..d.h {
                    let line = &mut dst[y * d.w..(y + 1) * d.w];
                    if y < ylo || y >= yhi || xlo >= xhi {
                        line.fill(0.0);
                        continue;
                    }
                    let sy = (y as isize + di) as usize;
                    line[..xlo].fill(0.0);
                    line[xhi..].fill(0.0);
                    let sx = (xlo as isize + dj) as usize;
                    line[xlo..xhi].copy_from_slice(&plane[sy * d.w + sx..sy * d.w + sx + (xhi - xlo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates sample `s` of the batch columns into
/// its input gradient.
fn col2im(d: &Dims, cols: &[f64], s: usize, gx: &mut [f64]) {
    let hw = d.plane();
    for c in 0..d.c {
        let plane = &mut gx[c * hw..(c + 1) * hw];
        for i in 0..d.kh {
            let di = i as isize - (d.kh / 2) as isize;
            let (ylo, yhi) = valid(d.h, di);
            for j in 0..d.kw {
                let dj = j as isize - (d.kw / 2) as isize;
                let (xlo, xhi) = valid(d.w, dj);
                let row = (c * d.kh + i) * d.kw + j;
                let src = &cols[(row * d.n + s) * hw..(row * d.n + s + 1) * hw];
                for y in ylo..yhi {
                    let sy = (y as isize + di) as usize;
                    let sx = (xlo as isize + dj) as usize;
                    let dst = &mut plane[sy * d.w + sx..sy * d.w + sx + (xhi - xlo)];
                    for (g, v) in dst.iter_mut().zip(&src[y * d.w + xlo..y * d.w + xhi]) {
                        *g += v;
                    }
                }
            }
        }
    }
}

/// `[patch, N·H·W]` columns of the whole batch, sample `s` in the column
/// block `s·H·W..(s+1)·H·W`.
fn batch_columns(d: &Dims, x: &[f64]) -> Vec<f64> {
    let chw = d.c * d.plane();
    let mut cols = vec![0.0; d.patch() * d.n * d.plane()];
    for s in 0..d.n {
        im2col(d, &x[s * chw..(s + 1) * chw], s, &mut cols);
    }
    cols
}

pub(super) fn forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let d = Dims::of(x, w)?;
    if let Some(b) = b {
        if b.shape != [d.o] {
            return Err(Error::Dimension(format!("conv2d bias {:?} for {} output channels", b.shape, d.o)));
        }
    }
    let (hw, patch, nhw) = (d.plane(), d.patch(), d.n * d.plane());
    let cols = batch_columns(&d, &x.data);
    // one product for the whole batch, laid out [O, N, H·W]
    let mut flat = vec![0.0; d.o * nhw];
    gemm(d.o, patch, nhw, &w.data, false, &cols, false, &mut flat, 0.0);
    let mut out = vec![0.0; d.n * d.o * hw];
    for o in 0..d.o {
        let bias = b.map_or(0.0, |b| b.data[o]);
        for s in 0..d.n {
            let src = &flat[(o * d.n + s) * hw..(o * d.n + s + 1) * hw];
            let dst = &mut out[(s * d.o + o) * hw..(s * d.o + o + 1) * hw];
            for (v, u) in dst.iter_mut().zip(src) {
                *v = u + bias;
            }
        }
    }
    Ok(Tensor { shape: vec![d.n, d.o, d.h, d.w], data: out })
}

/// Returns `(dx, dw, db)`; `dx` and `dw` only when requested.
pub(super) fn backward(
    x: &Tensor,
    w: &Tensor,
    g: &[f64],
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let d = Dims::of(x, w).expect("shapes checked in forward");
    let (hw, patch, nhw) = (d.plane(), d.patch(), d.n * d.plane());
    // upstream gradient as [O, N, H·W]
    let mut gt = vec![0.0; d.o * nhw];
    let mut gb = vec![0.0; d.o];
    for s in 0..d.n {
        for o in 0..d.o {
            let src = &g[(s * d.o + o) * hw..(s * d.o + o + 1) * hw];
            gb[o] += src.iter().sum::<f64>();
            gt[(o * d.n + s) * hw..(o * d.n + s + 1) * hw].copy_from_slice(src);
        }
    }
    let gw = want_w.then(|| {
        let cols = batch_columns(&d, &x.data);
        let mut gw = vec![0.0; w.len()];
        gemm(d.o, nhw, patch, &gt, false, &cols, true, &mut gw, 0.0);
        gw
    });
    let gx = want_x.then(|| {
        let mut gcols = vec![0.0; patch * nhw];
        gemm(patch, d.o, nhw, &w.data, true, &gt, false, &mut gcols, 0.0);
        let mut gx = vec![0.0; x.len()];
        let chw = d.c * hw;
        for s in 0..d.n {
            col2im(&d, &gcols, s, &mut gx[s * chw..(s + 1) * chw]);
        }
        gx
    });
    (gx, gw, gb)
}

fn window_dims(shape: &[usize], k: usize) -> Result<(usize, usize, usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Dimension(format!("local_mean needs rank >= 2, got {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if k == 0 || k > h || k > w {
        return Err(Error::Dimension(format!("window of {k} taps does not fit a {h}x{w} image")));
    }
    let lead: usize = shape[..shape.len() - 2].iter().product();
    Ok((lead, h, w, h - k + 1, w - k + 1))
}

pub(super) fn local_mean(x: &Tensor, taps: &[f64]) -> Result<Tensor> {
    let k = taps.len();
    let (lead, h, w, oh, ow) = window_dims(&x.shape, k)?;
    let mut out = vec![0.0; lead * oh * ow];
    let mut horiz = vec![0.0; h * ow];
    for p in 0..lead {
        let img = &x.data[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for c in 0..ow {
                horiz[r * ow + c] = (0..k).map(|t| taps[t] * img[r * w + c + t]).sum();
            }
        }
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                dst[r * ow + c] = (0..k).map(|t| taps[t] * horiz[(r + t) * ow + c]).sum();
            }
        }
    }
    let mut shape = x.shape.clone();
    let rank = shape.len();
    shape[rank - 2] = oh;
    shape[rank - 1] = ow;
    Ok(Tensor { shape, data: out })
}

pub(super) fn local_mean_backward(shape: &[usize], taps: &[f64], g: &[f64], gx: &mut [f64]) {
    let k = taps.len();
    let (lead, h, w, oh, ow) = window_dims(shape, k).expect("shapes checked in forward");
    let mut horiz = vec![0.0; h * ow];
    for p in 0..lead {
        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
        horiz.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..oh {
            for c in 0..ow {
                for t in 0..k {
                    horiz[(r + t) * ow + c] += taps[t] * gp[r * ow + c];
                }
            }
        }
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for c in 0..ow {
                for t in 0..k {
                    dst[r * w + c + t] += taps[t] * horiz[r * ow + c];
                }
            }
        }
    }
}
