//! Histogram Bayes filter over `(heading, y, x)` with learned motion and
//! observation models.

mod lingunet;
mod motion;

pub use lingunet::LingUnet;
pub use motion::{tent_filter, upscale_kernels, upscale_matrix, MotionModel};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;

use crate::config::Config;
use crate::gridsim::{wrap_angle, Pose};
use crate::langmodel::LanguageModel;
use crate::mapper::{MapGeometry, SemanticMap};
use crate::tensor::{ParamStore, ScatterGeom, Tape, Var};
use crate::{Error, Real, Result};

/// Below this remaining mass an observation update is rejected.
pub const DEGENERATE_MASS: f64 = 1e-9;

/// Heading bin of `theta`; bins are centered on multiples of `2π/Θ`, bin 0
/// facing +x.
pub fn heading_bin(theta: f64, headings: usize) -> usize {
    let w = TAU / headings as f64;
    let a = wrap_angle(theta + w / 2.0);
    let a = if a < 0.0 { a + TAU } else { a };
    (libm::floor(a / w) as usize) % headings
}

pub fn heading_center(bin: usize, headings: usize) -> f64 {
    wrap_angle(bin as f64 * TAU / headings as f64)
}

/// Delta belief `[Θ, Y, X]` at the bin containing `pose`.
pub fn init_belief<S: Real>(pose: &Pose, geometry: &MapGeometry, headings: usize) -> Result<Vec<S>> {
    let (cx, cy) = geometry
        .cell_of(pose.x, pose.y)
        .ok_or_else(|| Error::Geometry(format!("start ({:.3}, {:.3}) outside the map", pose.x, pose.y)))?;
    let n = geometry.size;
    let mut b = vec![S::zero(); headings * n * n];
    b[(heading_bin(pose.theta, headings) * n + cy) * n + cx] = S::one();
    Ok(b)
}

/// Pushes the belief through per-cell `k x k` kernels upscaled by `upscale`,
/// drops mass leaving the grid and renormalizes.
///
/// Bilinear upscaling places coarse tap `d` at fine offset `u·d` and spreads
/// it with a tent of half-width `u - 1`, so the upscaled push-forward is a
/// dilated scatter onto a grid padded by `u - 1`, then one tent convolution
/// that also crops the padding.
pub fn predict<S: Real>(tape: &mut Tape<S>, belief: Var, kernels: Var, k: usize, upscale: usize) -> Result<Var> {
    let pushed = if upscale <= 1 {
        tape.scatter_predict(belief, kernels, k)?
    } else {
        let geom = ScatterGeom {
            k,
            dilation: upscale,
            pad: upscale - 1,
        };
        let wide = tape.scatter_predict_dilated(belief, kernels, geom)?;
        let th = tape.shape(belief)[0];
        let side = 2 * upscale - 1;
        let tent = tape.constant(&[th, th, side, side], tent_filter(th, upscale).into_iter().map(S::from_f64).collect())?;
        tape.conv2d(wide, tent, 1, 0)?
    };
    tape.normalize(pushed, &[0, 1, 2])
}

/// Bayes update with a likelihood grid of the belief's shape.
pub fn observe<S: Real>(tape: &mut Tape<S>, prior: Var, likelihood: Var) -> Result<Var> {
    let joint = tape.mul(prior, likelihood)?;
    let mass: f64 = tape.data(joint).iter().map(|v| v.as_f64()).sum();
    if !(mass >= DEGENERATE_MASS) {
        return Err(Error::DegenerateUpdate(mass));
    }
    tape.normalize(joint, &[0, 1, 2])
}

/// Most probable bin of a `[Θ, Y, X]` histogram.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoalEstimate {
    pub heading: usize,
    pub cell: (usize, usize),
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub prob: f64,
}

/// Argmax with ties to the smallest flat index; coordinates are bin centers.
pub fn predict_goal<S: Real>(belief: &[S], headings: usize, geometry: &MapGeometry) -> GoalEstimate {
    let mut best = 0;
    for (i, v) in belief.iter().enumerate() {
        if *v > belief[best] {
            best = i;
        }
    }
    let n = geometry.size;
    let (heading, cy, cx) = (best / (n * n), (best / n) % n, best % n);
    let (x, y) = geometry.center(cx, cy);
    GoalEstimate {
        heading,
        cell: (cx, cy),
        x,
        y,
        theta: heading_center(heading, headings),
        prob: belief[best].as_f64(),
    }
}

/// Everything produced by one filter run.
#[derive(Clone, Debug)]
pub struct FilterRun {
    pub prior: Var,
    /// `b_1..b_T`.
    pub beliefs: Vec<Var>,
    pub predicted: Vec<Var>,
    pub kernels: Vec<Var>,
    pub likelihoods: Vec<Var>,
    pub attention_obs: Vec<Vec<f64>>,
    pub attention_act: Vec<Vec<f64>>,
}

impl FilterRun {
    /// Final belief, or the prior when no step was taken.
    pub fn last(&self) -> Var {
        self.beliefs.last().copied().unwrap_or(self.prior)
    }
}

#[derive(Clone, Debug)]
pub struct BayesFilter {
    pub motion: MotionModel,
    pub likelihood: LingUnet,
    pub headings: usize,
}

impl BayesFilter {
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, cfg: &Config, rng: &mut R) -> Result<Self> {
        let latent = 3 * cfg.hidden;
        Ok(Self {
            motion: MotionModel::new(
                store,
                latent,
                cfg.map_channels,
                cfg.motion_hidden,
                cfg.headings,
                cfg.kernel_size,
                cfg.kernel_upscale,
                rng,
            )?,
            likelihood: LingUnet::new(store, "filter.lingunet", cfg.map_channels + 1, cfg.lingunet_hidden, 3, cfg.headings, latent, rng)?,
            headings: cfg.headings,
        })
    }

    /// Map features with the observed mask appended as one more channel.
    pub fn likelihood_input<S: Real>(tape: &mut Tape<S>, map: &SemanticMap) -> Result<Var> {
        let mask = map.mask_var(tape)?;
        tape.concat(&[map.features, mask])
    }

    /// Runs `steps` predict/observe cycles from the delta at `start`.
    pub fn run<S: Real>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        lang: &LanguageModel,
        tokens: &[usize],
        map: &SemanticMap,
        start: &Pose,
        steps: usize,
    ) -> Result<FilterRun> {
        let n = map.geometry.size;
        if n % 8 != 0 {
            return Err(Error::Geometry(format!("map side {n} is not divisible by 8")));
        }
        let b0 = init_belief::<S>(start, &map.geometry, self.headings)?;
        let prior = tape.constant(&[self.headings, n, n], b0)?;
        let mut run = FilterRun {
            prior,
            beliefs: Vec::with_capacity(steps),
            predicted: Vec::with_capacity(steps),
            kernels: Vec::with_capacity(steps),
            likelihoods: Vec::with_capacity(steps),
            attention_obs: Vec::with_capacity(steps),
            attention_act: Vec::with_capacity(steps),
        };
        if steps == 0 {
            return Ok(run);
        }
        let enc = lang.encode(tape, store, tokens)?;
        let mut state = lang.initial_state(tape, store, &enc)?;
        let context = self.motion.map_context(tape, store, map.features)?;
        let input = Self::likelihood_input(tape, map)?;
        let feats = self.likelihood.encode(tape, store, input)?;
        let (k, u) = (self.motion.kernel, self.motion.upscale);
        let mut belief = prior;
        for t in 1..=steps {
            let (latent, next) = lang.decode_step(tape, store, t, state, &enc)?;
            state = next;
            let g = self.motion.kernels(tape, store, latent.act, context)?;
            let predicted = predict(tape, belief, g, k, u)?;
            let logits = self.likelihood.decode(tape, store, &feats, latent.obs)?;
            let l = tape.sigmoid(logits);
            belief = observe(tape, predicted, l)?;
            run.kernels.push(g);
            run.predicted.push(predicted);
            run.likelihoods.push(l);
            run.beliefs.push(belief);
            run.attention_obs.push(latent.attn_obs);
            run.attention_act.push(latent.attn_act);
        }
        Ok(run)
    }
}

#[cfg(test)]
mod tests;
