//! Action- and map-conditioned motion kernels.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::nn::Conv;
use crate::tensor::{Init, ParamId, ParamStore, Tape, Var};
use crate::{Real, Result};

/// Bilinear resampling matrix `[K'², K²]` taking a `k x k` kernel to
/// `K' = u(k+1) - 1` taps. Coarse tap `d` sits at fine offset `u·d`; the ring
/// just outside the coarse kernel is treated as zero, so every column sums to
/// `u²`.
pub fn upscale_matrix(k: usize, u: usize) -> Vec<f64> {
    let r = (k / 2) as i64;
    let kf = u * (k + 1) - 1;
    let rf = (kf / 2) as i64;
    // 1-D weights [kf, k]
    let mut w1 = vec![0.0; kf * k];
    for f in -rf..=rf {
        let c = f as f64 / u as f64;
        let c0 = libm::floor(c) as i64;
        let frac = c - c0 as f64;
        for (tap, wt) in [(c0, 1.0 - frac), (c0 + 1, frac)] {
            if wt > 0.0 && (-r..=r).contains(&tap) {
                w1[(f + rf) as usize * k + (tap + r) as usize] += wt;
            }
        }
    }
    let mut m = vec![0.0; kf * kf * k * k];
    for fy in 0..kf {
        for fx in 0..kf {
            for cy in 0..k {
                for cx in 0..k {
                    m[(fy * kf + fx) * k * k + cy * k + cx] = w1[fy * k + cy] * w1[fx * k + cx];
                }
            }
        }
    }
    m
}

/// Three 3x3 convolutions over `[tile(a), map]`; the first layer is split
/// into its action and map parts so the map part can be reused.
#[derive(Clone, Debug)]
pub struct MotionModel {
    pub w1_act: ParamId,
    pub w1_map: ParamId,
    pub b1: ParamId,
    pub l2: Conv,
    pub l3: Conv,
    pub headings: usize,
    pub kernel: usize,
    pub upscale: usize,
}

impl MotionModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        action_width: usize,
        map_channels: usize,
        hidden: usize,
        headings: usize,
        kernel: usize,
        upscale: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan = (action_width + map_channels) * 9;
        let out = headings * headings * kernel * kernel;
        Ok(Self {
            w1_act: store.add("filter.motion.l1.act", &[hidden, action_width, 3, 3], Init::FanIn(fan), rng)?,
            w1_map: store.add("filter.motion.l1.map", &[hidden, map_channels, 3, 3], Init::FanIn(fan), rng)?,
            b1: store.add("filter.motion.l1.b", &[hidden], Init::Zeros, rng)?,
            l2: Conv::new(store, "filter.motion.l2", hidden, hidden, 3, 1, 1, rng)?,
            l3: Conv::new(store, "filter.motion.l3", hidden, out, 3, 1, 1, rng)?,
            headings,
            kernel,
            upscale,
        })
    }

    /// Side of the upscaled kernel the prediction step applies.
    pub fn effective_kernel(&self) -> usize {
        if self.upscale > 1 {
            self.upscale * (self.kernel + 1) - 1
        } else {
            self.kernel
        }
    }

    /// Map contribution to the first layer, `[hidden, Y, X]`.
    pub fn map_context<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, map: Var) -> Result<Var> {
        let w = tape.param(store, self.w1_map);
        tape.conv2d(map, w, 1, 1)
    }

    /// Coarse kernel field `[Θ·Θ·K², Y, X]`, normalized per source cell and
    /// heading. [`crate::filter::predict`] applies the upscale.
    pub fn kernels<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, action: Var, context: Var) -> Result<Var> {
        let s = tape.shape(context).to_vec();
        let (h, w) = (s[1], s[2]);
        let wa = tape.param(store, self.w1_act);
        let a = tape.conv2d_tiled(action, wa, h, w, 1)?;
        let x = tape.add(a, context)?;
        let b1 = tape.param(store, self.b1);
        let x = tape.add_channel_bias(x, b1)?;
        let x = tape.relu(x);
        let x = self.l2.forward(tape, store, x)?;
        let x = tape.relu(x);
        let logits = self.l3.forward(tape, store, x)?;
        let (th, k) = (self.headings, self.kernel);
        let grouped = tape.reshape(logits, &[th, th * k * k, h * w])?;
        let g = tape.softmax(grouped, &[1])?;
        tape.reshape(g, &[th * th * k * k, h, w])
    }
}

/// Upscaled kernel field `[Θ·Θ·K'², Y, X]` from a coarse one, each fine
/// kernel divided by `u²` so it keeps unit mass.
pub fn upscale_kernels(coarse: &[f64], headings: usize, k: usize, u: usize, cells: usize) -> Vec<f64> {
    let m = upscale_matrix(k, u);
    let kf = u * (k + 1) - 1;
    let norm = (u * u) as f64;
    let pairs = headings * headings;
    let mut out = vec![0.0; pairs * kf * kf * cells];
    for p in 0..pairs {
        for f in 0..kf * kf {
            let dst = &mut out[(p * kf * kf + f) * cells..(p * kf * kf + f + 1) * cells];
            for c in 0..k * k {
                let w = m[f * k * k + c] / norm;
                if w == 0.0 {
                    continue;
                }
                let src = &coarse[(p * k * k + c) * cells..(p * k * k + c + 1) * cells];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    out
}

/// Separable tent `[Θ, Θ, 2u-1, 2u-1]`, diagonal across headings, with total
/// mass 1 per heading.
pub fn tent_filter(headings: usize, u: usize) -> Vec<f64> {
    let side = 2 * u - 1;
    let t: Vec<f64> = (0..side).map(|i| 1.0 - (i as f64 - (u - 1) as f64).abs() / u as f64).collect();
    let norm = (u * u) as f64;
    let mut w = vec![0.0; headings * headings * side * side];
    for h in 0..headings {
        for y in 0..side {
            for x in 0..side {
                w[((h * headings + h) * side + y) * side + x] = t[y] * t[x] / norm;
            }
        }
    }
    w
}
