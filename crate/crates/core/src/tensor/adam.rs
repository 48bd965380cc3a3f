use alloc::vec;
use alloc::vec::Vec;

use super::ParamStore;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay applied directly to the parameters.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-7,
        }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new<S: Real>(store: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros = |_| -> Vec<f64> { Vec::new() };
        let mut s = Self {
            config,
            m: store.ids().map(zeros).collect(),
            v: store.ids().map(zeros).collect(),
            step: 0,
        };
        for (i, id) in store.ids().enumerate() {
            let n = store.tensor(id).len();
            s.m[i] = vec![0.0; n];
            s.v[i] = vec![0.0; n];
        }
        s
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update from the gradients stored in `store`.
    /// Parameters without a gradient only receive weight decay. A non-finite
    /// gradient aborts before anything is modified.
    pub fn step<S: Real>(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Invalid("optimizer state does not match parameters".into()));
        }
        for id in store.ids() {
            let t = store.tensor(id);
            if t.grad.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteGradient(store.name(id).into()));
            }
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        for (i, id) in store.ids().enumerate() {
            let t = store.tensor_mut(id);
            let grad = t.grad.take();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                let mut pv = p.as_f64();
                if let Some(g) = &grad {
                    let gj = g[j].as_f64();
                    m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                    v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                    let mh = m[j] / bc1;
                    let vh = v[j] / bc2;
                    pv -= c.lr * mh / (libm::sqrt(vh) + c.eps);
                }
                pv -= c.lr * c.weight_decay * p.as_f64();
                *p = S::from_f64(pv);
            }
            t.grad = grad;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::Init;

    fn one_param(v: f64) -> (ParamStore<f64>, crate::tensor::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", &[1], Init::Const(v), &mut seeded(0)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let (mut s, id) = one_param(2.5);
        let mut opt = AdamState::new(&s, AdamConfig { weight_decay: 0.0, ..Default::default() });
        s.add_grad(id, &[0.0]);
        opt.step(&mut s).unwrap();
        assert_eq!(s.tensor(id).data(), &[2.5]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_is_a_bias_corrected_unit_update() {
        let (mut s, id) = one_param(1.0);
        let mut opt = AdamState::new(&s, AdamConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() });
        s.add_grad(id, &[1.0]);
        opt.step(&mut s).unwrap();
        // m̂ = v̂ = 1, so the step is lr / (1 + eps)
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.tensor(id).data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn quadratic_descent_shrinks_monotonically() {
        let (mut s, id) = one_param(5.0);
        let mut opt = AdamState::new(&s, AdamConfig { lr: 0.5, weight_decay: 0.0, ..Default::default() });
        let mut prev = 5.0f64;
        for _ in 0..10 {
            let w = s.tensor(id).data()[0];
            s.add_grad(id, &[2.0 * w]);
            opt.step(&mut s).unwrap();
            let now = s.tensor(id).data()[0].abs();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn nan_gradient_is_rejected_before_mutation() {
        let (mut s, id) = one_param(1.0);
        let mut opt = AdamState::new(&s, AdamConfig::default());
        s.add_grad(id, &[f64::NAN]);
        assert!(matches!(opt.step(&mut s), Err(Error::NonFiniteGradient(_))));
        assert_eq!(s.tensor(id).data(), &[1.0]);
        assert_eq!(opt.step_count(), 0);
    }
}
