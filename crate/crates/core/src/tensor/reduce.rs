//! Reductions and normalisations. Sums accumulate in `f64`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Op, Tape, Var};
use super::AxisGroups;
use crate::{Error, Real, Result};

/// Floor added inside every logarithm and normalising denominator.
pub const LOG_EPS: f64 = 1e-12;

/// Per-group sums of `f(j)` over the members of each group in block layout,
/// accumulated in member order.
fn block_sums(pre: usize, mid: usize, post: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut acc = vec![0.0; pre * post];
    for p in 0..pre {
        let a = &mut acc[p * post..(p + 1) * post];
        for m in 0..mid {
            let base = (p * mid + m) * post;
            for (q, s) in a.iter_mut().enumerate() {
                *s += f(base + q);
            }
        }
    }
    acc
}

/// Calls `f(element, group)` for every element in block layout.
fn block_each(pre: usize, mid: usize, post: usize, mut f: impl FnMut(usize, usize)) {
    for p in 0..pre {
        for m in 0..mid {
            let base = (p * mid + m) * post;
            for q in 0..post {
                f(base + q, p * post + q);
            }
        }
    }
}

pub(super) fn softmax_backward<S: Real>(groups: &AxisGroups, y: &[S], g: &[S], gx: &mut [S]) {
    if let Some((pre, mid, post)) = groups.blocks {
        let dot = block_sums(pre, mid, post, |j| g[j].as_f64() * y[j].as_f64());
        block_each(pre, mid, post, |j, k| gx[j] += S::from_f64(y[j].as_f64() * (g[j].as_f64() - dot[k])));
        return;
    }
    for &o in &groups.outer {
        let dot: f64 = groups
            .inner
            .iter()
            .map(|&i| g[o + i].as_f64() * y[o + i].as_f64())
            .sum();
        for &i in &groups.inner {
            let j = o + i;
            gx[j] += S::from_f64(y[j].as_f64() * (g[j].as_f64() - dot));
        }
    }
}

pub(super) fn normalize_backward<S: Real>(groups: &AxisGroups, x: &[S], g: &[S], gx: &mut [S]) {
    if let Some((pre, mid, post)) = groups.blocks {
        let denom = block_sums(pre, mid, post, |j| x[j].as_f64());
        let dot = block_sums(pre, mid, post, |j| g[j].as_f64() * x[j].as_f64());
        block_each(pre, mid, post, |j, k| {
            let d = denom[k] + LOG_EPS;
            gx[j] += S::from_f64(g[j].as_f64() / d - dot[k] / (d * d));
        });
        return;
    }
    for &o in &groups.outer {
        let denom: f64 = groups.inner.iter().map(|&i| x[o + i].as_f64()).sum::<f64>() + LOG_EPS;
        let dot: f64 = groups
            .inner
            .iter()
            .map(|&i| g[o + i].as_f64() * x[o + i].as_f64())
            .sum();
        for &i in &groups.inner {
            let j = o + i;
            gx[j] += S::from_f64(g[j].as_f64() / denom - dot / (denom * denom));
        }
    }
}

pub(super) fn nll_backward<S: Real>(b: &[S], target: &[S], g: S, gb: &mut [S]) {
    let g = g.as_f64();
    for ((d, &bv), &t) in gb.iter_mut().zip(b).zip(target) {
        if t != S::zero() {
            *d += S::from_f64(-g * t.as_f64() / (bv.as_f64() + LOG_EPS));
        }
    }
}

pub(super) fn cross_entropy_backward<S: Real>(logits: &[S], target: usize, g: S, gl: &mut [S]) {
    let p = softmax_f64(logits);
    let g = g.as_f64();
    for (i, (d, pi)) in gl.iter_mut().zip(p).enumerate() {
        let onehot = if i == target { 1.0 } else { 0.0 };
        *d += S::from_f64(g * (pi - onehot));
    }
}

fn softmax_f64<S: Real>(v: &[S]) -> Vec<f64> {
    let m = v.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| libm::exp(x.as_f64() - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl<S: Real> Tape<S> {
    /// Softmax over the given axes, with max subtraction.
    pub fn softmax(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let groups = AxisGroups::new(&shape, axes, "softmax")?;
        let xv = self.data(x);
        let mut out = vec![S::zero(); xv.len()];
        if let Some((pre, mid, post)) = groups.blocks {
            let mut mx = vec![f64::NEG_INFINITY; pre * post];
            block_each(pre, mid, post, |j, k| mx[k] = mx[k].max(xv[j].as_f64()));
            let e: Vec<f64> = {
                let mut e = vec![0.0; xv.len()];
                block_each(pre, mid, post, |j, k| e[j] = libm::exp(xv[j].as_f64() - mx[k]));
                e
            };
            let s = block_sums(pre, mid, post, |j| e[j]);
            block_each(pre, mid, post, |j, k| out[j] = S::from_f64(S::from_f64(e[j]).as_f64() / s[k]));
            return Ok(self.push(shape, out, Op::Softmax { x, groups }, &[x]));
        }
        for &o in &groups.outer {
            let m = groups
                .inner
                .iter()
                .map(|&i| xv[o + i].as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for &i in &groups.inner {
                let e = libm::exp(xv[o + i].as_f64() - m);
                s += e;
                out[o + i] = S::from_f64(e);
            }
            for &i in &groups.inner {
                out[o + i] = S::from_f64(out[o + i].as_f64() / s);
            }
        }
        Ok(self.push(shape, out, Op::Softmax { x, groups }, &[x]))
    }

    /// `x / (sum over axes + eps)` for nonnegative `x`.
    pub fn normalize(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let groups = AxisGroups::new(&shape, axes, "normalize")?;
        let xv = self.data(x);
        let mut out = vec![S::zero(); xv.len()];
        if let Some((pre, mid, post)) = groups.blocks {
            let s = block_sums(pre, mid, post, |j| xv[j].as_f64());
            block_each(pre, mid, post, |j, k| out[j] = S::from_f64(xv[j].as_f64() / (s[k] + LOG_EPS)));
            return Ok(self.push(shape, out, Op::Normalize { x, groups }, &[x]));
        }
        for &o in &groups.outer {
            let s: f64 = groups.inner.iter().map(|&i| xv[o + i].as_f64()).sum::<f64>() + LOG_EPS;
            for &i in &groups.inner {
                out[o + i] = S::from_f64(xv[o + i].as_f64() / s);
            }
        }
        Ok(self.push(shape, out, Op::Normalize { x, groups }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().map(|v| v.as_f64()).sum();
        self.push(vec![1], vec![S::from_f64(s)], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.data(x).len() as f64;
        let s: f64 = self.data(x).iter().map(|v| v.as_f64()).sum();
        self.push(vec![1], vec![S::from_f64(s / n)], Op::Mean(x), &[x])
    }

    /// Maximum over the leading axis: `[A, rest] -> [rest]`.
    pub fn max_axis0(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::shape("max_axis0", format!("{s:?} has no trailing axes")));
        }
        let inner: usize = s[1..].iter().product();
        let xv = self.data(x);
        let mut out = xv[..inner].to_vec();
        let mut argmax: Vec<u32> = (0..inner as u32).collect();
        for a in 1..s[0] {
            for i in 0..inner {
                let v = xv[a * inner + i];
                if v > out[i] {
                    out[i] = v;
                    argmax[i] = (a * inner + i) as u32;
                }
            }
        }
        Ok(self.push(s[1..].to_vec(), out, Op::MaxAxis0 { x, argmax }, &[x]))
    }

    /// `-Σ target · ln(belief + eps)`: KL(target ‖ belief) plus the target's
    /// entropy.
    pub fn nll_histogram(&mut self, belief: Var, target: &[S]) -> Result<Var> {
        let bv = self.data(belief);
        if target.len() != bv.len() {
            return Err(Error::shape("nll_histogram", format!("belief {:?}, target of {}", self.shape(belief), target.len())));
        }
        let v: f64 = bv
            .iter()
            .zip(target)
            .filter(|(_, t)| **t != S::zero())
            .map(|(b, t)| -t.as_f64() * libm::log(b.as_f64() + LOG_EPS))
            .sum();
        Ok(self.push(
            vec![1],
            vec![S::from_f64(v)],
            Op::Nll {
                belief,
                target: target.to_vec(),
            },
            &[belief],
        ))
    }

    /// Same loss with a one-hot target at a multi-index of the belief.
    pub fn nll_histogram_index(&mut self, belief: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(belief).to_vec();
        let flat = super::flat_index(&shape, index)?;
        let mut target = vec![S::zero(); self.data(belief).len()];
        target[flat] = S::one();
        self.nll_histogram(belief, &target)
    }

    /// Cross-entropy of class `target` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.data(logits);
        if self.shape(logits).len() != 1 || target >= lv.len() {
            return Err(Error::IndexOutOfBounds {
                index: vec![target],
                bounds: self.shape(logits).to_vec(),
            });
        }
        let m = lv.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + libm::log(lv.iter().map(|x| libm::exp(x.as_f64() - m)).sum::<f64>());
        let v = lse - lv[target].as_f64();
        Ok(self.push(vec![1], vec![S::from_f64(v)], Op::CrossEntropy { logits, target }, &[logits]))
    }
}
