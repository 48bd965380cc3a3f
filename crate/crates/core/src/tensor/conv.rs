//! Spatial operators: convolutions (im2col + GEMM), pooling, upsampling and
//! the scatter operators used by the mapper and the filter.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{gemm, Op as Layout};
use super::tape::{Op, Tape, Var};
use crate::{Error, Real, Result};

/// Index map shared by convolution and transposed convolution: a `big` grid
/// position `small * stride + k - pad` is paired with each `small` position.
#[derive(Clone, Copy, Debug)]
struct Patch {
    channels: usize,
    big_h: usize,
    big_w: usize,
    small_h: usize,
    small_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Patch {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.small_h * self.small_w
    }

    fn is_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    #[inline]
    fn big_index(&self, small: usize, k: usize, big: usize) -> Option<usize> {
        let p = (small * self.stride + k) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < big).then_some(p as usize)
    }

    /// `cols[(c,ky,kx), (sy,sx)] = big[c, sy*s+ky-p, sx*s+kx-p]` (zero outside).
    fn im2col<S: Real>(&self, big: &[S]) -> Vec<S> {
        let n = self.cols();
        let mut cols = vec![S::zero(); self.rows() * n];
        for c in 0..self.channels {
            let plane = &big[c * self.big_h * self.big_w..(c + 1) * self.big_h * self.big_w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * n;
                    for sy in 0..self.small_h {
                        let Some(by) = self.big_index(sy, ky, self.big_h) else { continue };
                        let src = &plane[by * self.big_w..(by + 1) * self.big_w];
                        let dst = &mut cols[row + sy * self.small_w..row + (sy + 1) * self.small_w];
                        if self.stride == 1 {
                            let (lo, hi) = self.valid_range(kx);
                            if lo < hi {
                                let b0 = lo + kx - self.pad;
                                dst[lo..hi].copy_from_slice(&src[b0..b0 + hi - lo]);
                            }
                        } else {
                            for (sx, d) in dst.iter_mut().enumerate() {
                                if let Some(bx) = self.big_index(sx, kx, self.big_w) {
                                    *d = src[bx];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Patch::im2col`]: scatter-adds `cols` into `big`.
    fn col2im<S: Real>(&self, cols: &[S], big: &mut [S]) {
        let n = self.cols();
        for c in 0..self.channels {
            let plane = &mut big[c * self.big_h * self.big_w..(c + 1) * self.big_h * self.big_w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * n;
                    for sy in 0..self.small_h {
                        let Some(by) = self.big_index(sy, ky, self.big_h) else { continue };
                        let dst = &mut plane[by * self.big_w..(by + 1) * self.big_w];
                        let src = &cols[row + sy * self.small_w..row + (sy + 1) * self.small_w];
                        if self.stride == 1 {
                            let (lo, hi) = self.valid_range(kx);
                            if lo < hi {
                                let b0 = lo + kx - self.pad;
                                for (d, &s) in dst[b0..b0 + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                    *d += s;
                                }
                            }
                        } else {
                            for (sx, &s) in src.iter().enumerate() {
                                if let Some(bx) = self.big_index(sx, kx, self.big_w) {
                                    dst[bx] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Range of `small` x-positions whose big index is in bounds (stride 1).
    fn valid_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.big_w + self.pad).saturating_sub(kx).min(self.small_w);
        (lo, hi.max(lo))
    }
}

#[derive(Clone, Copy, Debug)]
pub(super) struct ConvGeom {
    patch: Patch,
    cout: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Self {
        let (h, wd) = (x[1], x[2]);
        let (kh, kw) = (w[2], w[3]);
        Self {
            patch: Patch {
                channels: x[0],
                big_h: h,
                big_w: wd,
                small_h: (h + 2 * pad - kh) / stride + 1,
                small_w: (wd + 2 * pad - kw) / stride + 1,
                kh,
                kw,
                stride,
                pad,
            },
            cout: w[0],
        }
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.cout, self.patch.small_h, self.patch.small_w]
    }
}

fn conv2d_forward<S: Real>(geo: &ConvGeom, x: &[S], w: &[S]) -> Vec<S> {
    let p = &geo.patch;
    let mut out = vec![S::zero(); geo.cout * p.cols()];
    if p.is_identity() {
        gemm(geo.cout, p.rows(), p.cols(), S::one(), w, Layout(false), x, Layout(false), S::zero(), &mut out);
    } else {
        let cols = p.im2col(x);
        gemm(geo.cout, p.rows(), p.cols(), S::one(), w, Layout(false), &cols, Layout(false), S::zero(), &mut out);
    }
    out
}

pub(super) fn conv2d_backward_input<S: Real>(geo: &ConvGeom, w: &[S], g: &[S], gx: &mut [S]) {
    let p = &geo.patch;
    if p.is_identity() {
        gemm(p.rows(), geo.cout, p.cols(), S::one(), w, Layout(true), g, Layout(false), S::one(), gx);
        return;
    }
    let mut gcols = vec![S::zero(); p.rows() * p.cols()];
    gemm(p.rows(), geo.cout, p.cols(), S::one(), w, Layout(true), g, Layout(false), S::zero(), &mut gcols);
    p.col2im(&gcols, gx);
}

pub(super) fn conv2d_backward_weight<S: Real>(geo: &ConvGeom, x: &[S], g: &[S], gw: &mut [S]) {
    let p = &geo.patch;
    if p.is_identity() {
        gemm(geo.cout, p.cols(), p.rows(), S::one(), g, Layout(false), x, Layout(true), S::one(), gw);
        return;
    }
    let cols = p.im2col(x);
    gemm(geo.cout, p.cols(), p.rows(), S::one(), g, Layout(false), &cols, Layout(true), S::one(), gw);
}

#[derive(Clone, Copy, Debug)]
pub(super) struct TransposeGeom {
    patch: Patch,
    cin: usize,
}

impl TransposeGeom {
    /// `x: [cin, h, w]`, `w: [cin, cout, k, k]`.
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Self {
        let (h, wd) = (x[1], x[2]);
        let (kh, kw) = (w[2], w[3]);
        Self {
            patch: Patch {
                channels: w[1],
                big_h: (h - 1) * stride + kh - 2 * pad,
                big_w: (wd - 1) * stride + kw - 2 * pad,
                small_h: h,
                small_w: wd,
                kh,
                kw,
                stride,
                pad,
            },
            cin: x[0],
        }
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.patch.channels, self.patch.big_h, self.patch.big_w]
    }
}

fn conv_transpose2d_forward<S: Real>(geo: &TransposeGeom, x: &[S], w: &[S]) -> Vec<S> {
    let p = &geo.patch;
    let mut cols = vec![S::zero(); p.rows() * p.cols()];
    gemm(p.rows(), geo.cin, p.cols(), S::one(), w, Layout(true), x, Layout(false), S::zero(), &mut cols);
    let mut out = vec![S::zero(); p.channels * p.big_h * p.big_w];
    p.col2im(&cols, &mut out);
    out
}

pub(super) fn conv_transpose2d_backward_input<S: Real>(geo: &TransposeGeom, w: &[S], g: &[S], gx: &mut [S]) {
    let p = &geo.patch;
    let gcols = p.im2col(g);
    gemm(geo.cin, p.rows(), p.cols(), S::one(), w, Layout(false), &gcols, Layout(false), S::one(), gx);
}

pub(super) fn conv_transpose2d_backward_weight<S: Real>(geo: &TransposeGeom, x: &[S], g: &[S], gw: &mut [S]) {
    let p = &geo.patch;
    let gcols = p.im2col(g);
    gemm(geo.cin, p.cols(), p.rows(), S::one(), x, Layout(false), &gcols, Layout(true), S::one(), gw);
}

/// Valid kernel-tap range along one axis for output position `o` (stride 1).
#[inline]
fn tap_range(o: usize, k: usize, pad: usize, n: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(o);
    let hi = (n + pad).saturating_sub(o).min(k);
    (lo, hi.max(lo))
}

fn tiled_out(w: &[usize], h: usize, wd: usize, pad: usize) -> (usize, usize) {
    (h + 2 * pad - w[2] + 1, wd + 2 * pad - w[3] + 1)
}

fn conv2d_tiled_forward<S: Real>(ws: &[usize], w: &[S], a: &[S], h: usize, wd: usize, pad: usize) -> Vec<S> {
    let (cout, ca, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let (ho, wo) = tiled_out(ws, h, wd, pad);
    // per-tap response to the constant input
    let mut taps = vec![S::zero(); cout * kh * kw];
    for co in 0..cout {
        for ci in 0..ca {
            let av = a[ci];
            let base = (co * ca + ci) * kh * kw;
            for t in 0..kh * kw {
                taps[co * kh * kw + t] += w[base + t] * av;
            }
        }
    }
    let mut out = vec![S::zero(); cout * ho * wo];
    for co in 0..cout {
        let tp = &taps[co * kh * kw..(co + 1) * kh * kw];
        for oy in 0..ho {
            let (y0, y1) = tap_range(oy, kh, pad, h);
            for ox in 0..wo {
                let (x0, x1) = tap_range(ox, kw, pad, wd);
                let mut s = S::zero();
                for ky in y0..y1 {
                    for kx in x0..x1 {
                        s += tp[ky * kw + kx];
                    }
                }
                out[(co * ho + oy) * wo + ox] = s;
            }
        }
    }
    out
}

/// Gradient of the loss w.r.t. each per-tap response.
pub(super) fn conv2d_tiled_tap_grad<S: Real>(ws: &[usize], out_shape: &[usize], pad: usize, g: &[S]) -> Vec<S> {
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let (ho, wo) = (out_shape[1], out_shape[2]);
    let h = ho + kh - 1 - 2 * pad;
    let wd = wo + kw - 1 - 2 * pad;
    let mut tg = vec![0.0f64; cout * kh * kw];
    for co in 0..cout {
        for oy in 0..ho {
            let (y0, y1) = tap_range(oy, kh, pad, h);
            for ox in 0..wo {
                let (x0, x1) = tap_range(ox, kw, pad, wd);
                let gv = g[(co * ho + oy) * wo + ox].as_f64();
                for ky in y0..y1 {
                    for kx in x0..x1 {
                        tg[(co * kh + ky) * kw + kx] += gv;
                    }
                }
            }
        }
    }
    tg.into_iter().map(S::from_f64).collect()
}

pub(super) fn conv2d_tiled_backward_input<S: Real>(ws: &[usize], w: &[S], tg: &[S], ga: &mut [S]) {
    let (cout, ca, kk) = (ws[0], ws[1], ws[2] * ws[3]);
    for co in 0..cout {
        for (ci, d) in ga.iter_mut().enumerate().take(ca) {
            let base = (co * ca + ci) * kk;
            for t in 0..kk {
                *d += w[base + t] * tg[co * kk + t];
            }
        }
    }
}

pub(super) fn conv2d_tiled_backward_weight<S: Real>(ws: &[usize], a: &[S], tg: &[S], gw: &mut [S]) {
    let (cout, ca, kk) = (ws[0], ws[1], ws[2] * ws[3]);
    for co in 0..cout {
        for (ci, &av) in a.iter().enumerate().take(ca) {
            let base = (co * ca + ci) * kk;
            for t in 0..kk {
                gw[base + t] += tg[co * kk + t] * av;
            }
        }
    }
}

/// Window means over entries whose `mask` is set; windows with no valid entry
/// give zero. Returns per-input weights (`1/count` or 0) alongside the output.
fn masked_avg_weights<S: Real>(h: usize, w: usize, mask: &[bool], kh: usize, kw: usize) -> Vec<S> {
    let (ho, wo) = (h / kh, w / kw);
    let mut weight = vec![S::zero(); h * w];
    for oy in 0..ho {
        for ox in 0..wo {
            let cells = (0..kh).flat_map(|dy| (0..kw).map(move |dx| (oy * kh + dy) * w + ox * kw + dx));
            let count = cells.clone().filter(|&i| mask[i]).count();
            if count > 0 {
                let inv = S::from_f64(1.0 / count as f64);
                for i in cells.filter(|&i| mask[i]) {
                    weight[i] = inv;
                }
            }
        }
    }
    weight
}

fn masked_avg_forward<S: Real>(xs: &[usize], x: &[S], weight: &[S], kh: usize, kw: usize) -> Vec<S> {
    let (c, h, w) = (xs[0], xs[1], xs[2]);
    let (ho, wo) = (h / kh, w / kw);
    let mut out = vec![S::zero(); c * ho * wo];
    for ch in 0..c {
        for y in 0..ho * kh {
            for xx in 0..wo * kw {
                let i = y * w + xx;
                out[(ch * ho + y / kh) * wo + xx / kw] += weight[i] * x[ch * h * w + i];
            }
        }
    }
    out
}

pub(super) fn masked_avg_pool_backward<S: Real>(xs: &[usize], weight: &[S], k: (usize, usize), g: &[S], gx: &mut [S]) {
    let (c, h, w) = (xs[0], xs[1], xs[2]);
    let (kh, kw) = k;
    let (ho, wo) = (h / kh, w / kw);
    for ch in 0..c {
        for y in 0..ho * kh {
            for xx in 0..wo * kw {
                let i = y * w + xx;
                gx[ch * h * w + i] += weight[i] * g[(ch * ho + y / kh) * wo + xx / kw];
            }
        }
    }
}

pub(super) fn upsample_nearest_backward<S: Real>(xs: &[usize], f: usize, g: &[S], gx: &mut [S]) {
    let (c, h, w) = (xs[0], xs[1], xs[2]);
    let (ho, wo) = (h * f, w * f);
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                gx[(ch * h + y / f) * w + x / f] += g[(ch * ho + y) * wo + x];
            }
        }
    }
}

/// Source taps `(i0, i1, w1)` for each output coordinate (half-pixel centres).
fn bilinear_taps(n: usize, f: usize) -> Vec<(usize, usize, f64)> {
    (0..n * f)
        .map(|o| {
            let src = ((o as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = libm::floor(src) as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn upsample_bilinear_forward<S: Real>(xs: &[usize], f: usize, x: &[S]) -> Vec<S> {
    let (c, h, w) = (xs[0], xs[1], xs[2]);
    let (ty, tx) = (bilinear_taps(h, f), bilinear_taps(w, f));
    let (ho, wo) = (h * f, w * f);
    let mut out = vec![S::zero(); c * ho * wo];
    for ch in 0..c {
        let p = &x[ch * h * w..];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = (1.0 - fy) * ((1.0 - fx) * p[y0 * w + x0].as_f64() + fx * p[y0 * w + x1].as_f64())
                    + fy * ((1.0 - fx) * p[y1 * w + x0].as_f64() + fx * p[y1 * w + x1].as_f64());
                out[(ch * ho + oy) * wo + ox] = S::from_f64(v);
            }
        }
    }
    out
}

pub(super) fn upsample_bilinear_backward<S: Real>(xs: &[usize], f: usize, g: &[S], gx: &mut [S]) {
    let (c, h, w) = (xs[0], xs[1], xs[2]);
    let (ty, tx) = (bilinear_taps(h, f), bilinear_taps(w, f));
    let (ho, wo) = (h * f, w * f);
    for ch in 0..c {
        let p = &mut gx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let gv = g[(ch * ho + oy) * wo + ox].as_f64();
                p[y0 * w + x0] += S::from_f64(gv * (1.0 - fy) * (1.0 - fx));
                p[y0 * w + x1] += S::from_f64(gv * (1.0 - fy) * fx);
                p[y1 * w + x0] += S::from_f64(gv * fy * (1.0 - fx));
                p[y1 * w + x1] += S::from_f64(gv * fy * fx);
            }
        }
    }
}

/// Placement of scatter taps: tap `(dy, dx)` of a `k x k` kernel moves mass
/// from `(y, x)` to `(y + pad + dilation·dy, x + pad + dilation·dx)` on an
/// output grid padded by `pad` on every side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScatterGeom {
    pub k: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl ScatterGeom {
    fn offset(&self, tap: usize) -> isize {
        self.pad as isize + self.dilation as isize * (tap as isize - (self.k / 2) as isize)
    }
}

/// Source positions `p` in `0..n` whose target `p + off` lies in `0..m`.
#[inline]
fn shifted_range(n: usize, m: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (m as isize - off).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

/// Push-forward of a `[Θ, Y, X]` histogram through per-cell kernels laid out
/// as `[Θ_src, Θ_dst, K, K, Y, X]`. Mass leaving the grid is dropped.
fn scatter_predict_forward<S: Real>(bs: &[usize], b: &[S], g: &[S], sg: ScatterGeom) -> Vec<S> {
    let (th, h, w, k) = (bs[0], bs[1], bs[2], sg.k);
    let (ho, wo) = (h + 2 * sg.pad, w + 2 * sg.pad);
    let plane = h * w;
    let mut out = vec![S::zero(); th * ho * wo];
    for ts in 0..th {
        let bp = &b[ts * plane..(ts + 1) * plane];
        if bp.iter().all(|v| *v == S::zero()) {
            continue;
        }
        for td in 0..th {
            for ky in 0..k {
                let oy = sg.offset(ky);
                let (y0, y1) = shifted_range(h, ho, oy);
                for kx in 0..k {
                    let ox = sg.offset(kx);
                    let (x0, x1) = shifted_range(w, wo, ox);
                    let ch = ((ts * th + td) * k + ky) * k + kx;
                    let gp = &g[ch * plane..(ch + 1) * plane];
                    for y in y0..y1 {
                        let ty = (y as isize + oy) as usize;
                        let dst = &mut out[(td * ho + ty) * wo..(td * ho + ty + 1) * wo];
                        let row = y * w;
                        for x in x0..x1 {
                            let tx = (x as isize + ox) as usize;
                            dst[tx] += bp[row + x] * gp[row + x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adds the overlapping top-left window of `src[C, h, w]` into `dst[C, h', w']`.
pub(super) fn window2d_copy<S: Real>(ss: &[usize], src: &[S], ds: &[usize], dst: &mut [S]) {
    let (h, w) = (ss[1].min(ds[1]), ss[2].min(ds[2]));
    for c in 0..ss[0] {
        for y in 0..h {
            let s0 = (c * ss[1] + y) * ss[2];
            let d0 = (c * ds[1] + y) * ds[2];
            for x in 0..w {
                dst[d0 + x] += src[s0 + x];
            }
        }
    }
}

pub(super) fn scatter_predict_backward_belief<S: Real>(bs: &[usize], g: &[S], sg: ScatterGeom, gout: &[S], gb: &mut [S]) {
    let (th, h, w, k) = (bs[0], bs[1], bs[2], sg.k);
    let (ho, wo) = (h + 2 * sg.pad, w + 2 * sg.pad);
    let plane = h * w;
    for ts in 0..th {
        for td in 0..th {
            let go = &gout[td * ho * wo..(td + 1) * ho * wo];
            for ky in 0..k {
                let oy = sg.offset(ky);
                let (y0, y1) = shifted_range(h, ho, oy);
                for kx in 0..k {
                    let ox = sg.offset(kx);
                    let (x0, x1) = shifted_range(w, wo, ox);
                    let ch = ((ts * th + td) * k + ky) * k + kx;
                    let gp = &g[ch * plane..(ch + 1) * plane];
                    for y in y0..y1 {
                        let ty = (y as isize + oy) as usize;
                        for x in x0..x1 {
                            let tx = (x as isize + ox) as usize;
                            gb[ts * plane + y * w + x] += go[ty * wo + tx] * gp[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn scatter_predict_backward_kernel<S: Real>(bs: &[usize], b: &[S], sg: ScatterGeom, gout: &[S], gg: &mut [S]) {
    let (th, h, w, k) = (bs[0], bs[1], bs[2], sg.k);
    let (ho, wo) = (h + 2 * sg.pad, w + 2 * sg.pad);
    let plane = h * w;
    for ts in 0..th {
        let bp = &b[ts * plane..(ts + 1) * plane];
        for td in 0..th {
            let go = &gout[td * ho * wo..(td + 1) * ho * wo];
            for ky in 0..k {
                let oy = sg.offset(ky);
                let (y0, y1) = shifted_range(h, ho, oy);
                for kx in 0..k {
                    let ox = sg.offset(kx);
                    let (x0, x1) = shifted_range(w, wo, ox);
                    let ch = ((ts * th + td) * k + ky) * k + kx;
                    let gp = &mut gg[ch * plane..(ch + 1) * plane];
                    for y in y0..y1 {
                        let ty = (y as isize + oy) as usize;
                        for x in x0..x1 {
                            let tx = (x as isize + ox) as usize;
                            gp[y * w + x] += bp[y * w + x] * go[ty * wo + tx];
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn channel_mix_backward_input<S: Real>(xs: &[usize], ms: &[usize], m: &[S], g: &[S], gx: &mut [S]) {
    let (groups, cin, n) = (xs[0], xs[1], xs[2]);
    let cout = ms[0];
    for gi in 0..groups {
        gemm(
            cin,
            cout,
            n,
            S::one(),
            m,
            Layout(true),
            &g[gi * cout * n..(gi + 1) * cout * n],
            Layout(false),
            S::one(),
            &mut gx[gi * cin * n..(gi + 1) * cin * n],
        );
    }
}

pub(super) fn channel_mix_backward_matrix<S: Real>(xs: &[usize], ms: &[usize], x: &[S], g: &[S], gm: &mut [S]) {
    let (groups, cin, n) = (xs[0], xs[1], xs[2]);
    let cout = ms[0];
    for gi in 0..groups {
        gemm(
            cout,
            n,
            cin,
            S::one(),
            &g[gi * cout * n..(gi + 1) * cout * n],
            Layout(false),
            &x[gi * cin * n..(gi + 1) * cin * n],
            Layout(true),
            S::one(),
            gm,
        );
    }
}

fn expect_rank<S: Real>(tape: &Tape<S>, v: Var, rank: usize, op: &'static str) -> Result<Vec<usize>> {
    let s = tape.shape(v).to_vec();
    if s.len() != rank {
        return Err(Error::shape(op, format!("expected rank {rank}, got {s:?}")));
    }
    Ok(s)
}

impl<S: Real> Tape<S> {
    /// Cross-correlation of `x[Cin,H,W]` with `w[Cout,Cin,Kh,Kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = expect_rank(self, x, 3, "conv2d")?;
        let ws = expect_rank(self, w, 4, "conv2d")?;
        if ws[1] != xs[0] {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, kernel expects {}", xs[0], ws[1]),
            ));
        }
        if stride == 0 || ws[2] > xs[1] + 2 * pad || ws[3] > xs[2] + 2 * pad {
            return Err(Error::shape("conv2d", format!("kernel {ws:?} too large for {xs:?} (pad {pad}, stride {stride})")));
        }
        let geo = ConvGeom::new(&xs, &ws, stride, pad);
        let out = conv2d_forward(&geo, self.data(x), self.data(w));
        Ok(self.push(geo.out_shape(), out, Op::Conv2d { x, w, stride, pad }, &[x, w]))
    }

    /// Transposed convolution of `x[Cin,H,W]` with `w[Cin,Cout,K,K]`; output
    /// side is `(H-1)*stride + K - 2*pad`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = expect_rank(self, x, 3, "conv_transpose2d")?;
        let ws = expect_rank(self, w, 4, "conv_transpose2d")?;
        if ws[0] != xs[0] || stride == 0 || (xs[1] - 1) * stride + ws[2] <= 2 * pad {
            return Err(Error::shape("conv_transpose2d", format!("{xs:?} with kernel {ws:?}")));
        }
        let geo = TransposeGeom::new(&xs, &ws, stride, pad);
        let out = conv_transpose2d_forward(&geo, self.data(x), self.data(w));
        Ok(self.push(geo.out_shape(), out, Op::ConvTranspose2d { x, w, stride, pad }, &[x, w]))
    }

    /// Stride-1 convolution of the vector `a[A]` tiled over an `h x w` grid,
    /// computed without materialising the tiling. Equal to
    /// `conv2d(tile(a, h, w), w, 1, pad)`.
    pub fn conv2d_tiled(&mut self, a: Var, w: Var, h: usize, wd: usize, pad: usize) -> Result<Var> {
        let as_ = expect_rank(self, a, 1, "conv2d_tiled")?;
        let ws = expect_rank(self, w, 4, "conv2d_tiled")?;
        if ws[1] != as_[0] || ws[2] > h + 2 * pad || ws[3] > wd + 2 * pad {
            return Err(Error::shape("conv2d_tiled", format!("vector {as_:?} with kernel {ws:?}")));
        }
        let (ho, wo) = tiled_out(&ws, h, wd, pad);
        let out = conv2d_tiled_forward(&ws, self.data(w), self.data(a), h, wd, pad);
        Ok(self.push(vec![ws[0], ho, wo], out, Op::Conv2dTiled { a, w, pad }, &[a, w]))
    }

    /// Non-overlapping `k x k` max pooling.
    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let xs = expect_rank(self, x, 3, "max_pool2d")?;
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if k == 0 || h < k || w < k {
            return Err(Error::shape("max_pool2d", format!("window {k} on {xs:?}")));
        }
        let (ho, wo) = (h / k, w / k);
        let xv = self.data(x);
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = usize::MAX;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = (ch * h + oy * k + dy) * w + ox * k + dx;
                            if best == usize::MAX || xv[i] > xv[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best as u32);
                }
            }
        }
        Ok(self.push(vec![c, ho, wo], out, Op::MaxPool2d { x, argmax }, &[x]))
    }

    /// Mean over the entries of each `kh x kw` window whose `mask[H,W]` is set
    /// (zero when a window has none).
    pub fn masked_avg_pool2d(&mut self, x: Var, mask: &[bool], kh: usize, kw: usize) -> Result<Var> {
        let xs = expect_rank(self, x, 3, "masked_avg_pool2d")?;
        let (h, w) = (xs[1], xs[2]);
        if mask.len() != h * w || kh == 0 || kw == 0 || h % kh != 0 || w % kw != 0 {
            return Err(Error::shape("masked_avg_pool2d", format!("window {kh}x{kw} on {xs:?}, mask {}", mask.len())));
        }
        let weight = masked_avg_weights(h, w, mask, kh, kw);
        let out = masked_avg_forward(&xs, self.data(x), &weight, kh, kw);
        Ok(self.push(
            vec![xs[0], h / kh, w / kw],
            out,
            Op::MaskedAvgPool2d { x, weight, k: (kh, kw) },
            &[x],
        ))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xs = expect_rank(self, x, 3, "upsample_nearest")?;
        if factor == 0 {
            return Err(Error::shape("upsample_nearest", "factor 0"));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (ho, wo) = (h * factor, w * factor);
        let xv = self.data(x);
        let mut out = vec![S::zero(); c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    out[(ch * ho + y) * wo + xx] = xv[(ch * h + y / factor) * w + xx / factor];
                }
            }
        }
        Ok(self.push(vec![c, ho, wo], out, Op::UpsampleNearest { x, factor }, &[x]))
    }

    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xs = expect_rank(self, x, 3, "upsample_bilinear")?;
        if factor == 0 {
            return Err(Error::shape("upsample_bilinear", "factor 0"));
        }
        let out = upsample_bilinear_forward(&xs, factor, self.data(x));
        Ok(self.push(
            vec![xs[0], xs[1] * factor, xs[2] * factor],
            out,
            Op::UpsampleBilinear { x, factor },
            &[x],
        ))
    }

    /// Scatters rows of `x[N, C]` into `cells` bins by `targets`, combining
    /// collisions with a per-channel max. Returns `[C, cells]` and the hit mask.
    pub fn scatter_max(&mut self, x: Var, targets: &[Option<usize>], cells: usize) -> Result<(Var, Vec<bool>)> {
        let xs = expect_rank(self, x, 2, "scatter_max")?;
        let (n, c) = (xs[0], xs[1]);
        if targets.len() != n || targets.iter().flatten().any(|&t| t >= cells) {
            return Err(Error::shape("scatter_max", format!("{} targets for {n} rows, {cells} cells", targets.len())));
        }
        let xv = self.data(x);
        let mut out = vec![S::zero(); c * cells];
        let mut argmax = vec![u32::MAX; c * cells];
        let mut hit = vec![false; cells];
        for (row, t) in targets.iter().enumerate() {
            let Some(cell) = *t else { continue };
            hit[cell] = true;
            for ch in 0..c {
                let src = row * c + ch;
                let o = ch * cells + cell;
                if argmax[o] == u32::MAX || xv[src] > out[o] {
                    out[o] = xv[src];
                    argmax[o] = src as u32;
                }
            }
        }
        let v = self.push(vec![c, cells], out, Op::ScatterMax { x, argmax }, &[x]);
        Ok((v, hit))
    }

    /// Histogram prediction: pushes every bin of `b[Θ,Y,X]` through its own
    /// kernel `g[Θ·Θ·K·K, Y, X]` (layout `θ_src, θ_dst, Δy, Δx`).
    pub fn scatter_predict(&mut self, b: Var, g: Var, k: usize) -> Result<Var> {
        self.scatter_predict_dilated(b, g, ScatterGeom { k, dilation: 1, pad: 0 })
    }

    /// [`Tape::scatter_predict`] with taps spaced `dilation` cells apart onto
    /// an output grid `[Θ, Y + 2·pad, X + 2·pad]`.
    pub fn scatter_predict_dilated(&mut self, b: Var, g: Var, geom: ScatterGeom) -> Result<Var> {
        let bs = expect_rank(self, b, 3, "scatter_predict")?;
        let gs = expect_rank(self, g, 3, "scatter_predict")?;
        let k = geom.k;
        if k % 2 == 0 || geom.dilation == 0 || gs[0] != bs[0] * bs[0] * k * k || gs[1..] != bs[1..] {
            return Err(Error::shape("scatter_predict", format!("belief {bs:?}, kernel {gs:?}, {geom:?}")));
        }
        let out = scatter_predict_forward(&bs, self.data(b), self.data(g), geom);
        let shape = vec![bs[0], bs[1] + 2 * geom.pad, bs[2] + 2 * geom.pad];
        Ok(self.push(shape, out, Op::ScatterPredict { b, g, geom }, &[b, g]))
    }

    /// Resizes the spatial extent to `h x w` by zero padding at the bottom
    /// and right, or cropping from there.
    pub fn window2d(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let xs = expect_rank(self, x, 3, "window2d")?;
        let shape = vec![xs[0], h, w];
        let mut out = vec![S::zero(); xs[0] * h * w];
        window2d_copy(&xs, self.data(x), &shape, &mut out);
        Ok(self.push(shape, out, Op::Window2d(x), &[x]))
    }

    /// `y[g] = m · x[g]` for `x[G, Cin, N]`, `m[Cout, Cin]`.
    pub fn channel_mix(&mut self, x: Var, m: Var) -> Result<Var> {
        let xs = expect_rank(self, x, 3, "channel_mix")?;
        let ms = expect_rank(self, m, 2, "channel_mix")?;
        if ms[1] != xs[1] {
            return Err(Error::shape("channel_mix", format!("{xs:?} with matrix {ms:?}")));
        }
        let (groups, cin, n) = (xs[0], xs[1], xs[2]);
        let cout = ms[0];
        let mut out = vec![S::zero(); groups * cout * n];
        for gi in 0..groups {
            gemm(
                cout,
                cin,
                n,
                S::one(),
                self.data(m),
                Layout(false),
                &self.data(x)[gi * cin * n..(gi + 1) * cin * n],
                Layout(false),
                S::zero(),
                &mut out[gi * cout * n..(gi + 1) * cout * n],
            );
        }
        Ok(self.push(vec![groups, cout, n], out, Op::ChannelMix { x, m }, &[x, m]))
    }
}
