//! Central finite-difference checks of tape gradients, run in `f64`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{ParamStore, Tape, Tensor, Var};
use crate::Result;

/// Central-difference step for deep compositions, where a smaller step is
/// dominated by rounding in the loss.
pub const COMPOSITE_STEP: f64 = 1e-5;

/// Worst relative error found by a check and the input it belongs to.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradReport {
    fn new() -> Self {
        Self {
            max_rel_err: 0.0,
            worst: String::new(),
            checked: 0,
        }
    }

    fn record(&mut self, name: &str, analytic: &[f64], numeric: &[f64]) {
        let err = rel_err(analytic, numeric);
        self.checked += analytic.len();
        if err > self.max_rel_err || self.worst.is_empty() {
            self.max_rel_err = err;
            self.worst = name.to_string();
        }
    }
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, zero when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| libm::sqrt(v.map(|x| x * x).sum());
    let diff = norm(&mut a.iter().zip(n).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut n.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn loss_value(tape: &Tape<f64>, v: Var) -> f64 {
    tape.data(v)[0]
}

/// Checks `∂f/∂inputs` for a scalar function built on a fresh tape.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(loss_value(&tape, out))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_grad()))
        .collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut report = GradReport::new();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let n = inputs[i].len();
        let analytic: Vec<f64> = grads.get(v).map(|g| g.to_vec()).unwrap_or_else(|| alloc::vec![0.0; n]);
        let mut numeric = Vec::with_capacity(n);
        for j in 0..n {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        report.record(&alloc::format!("input {i}"), &analytic, &numeric);
    }
    Ok(report)
}

/// Checks `∂f/∂θ` for every tensor of `store`, probing at most `per_param`
/// evenly spaced entries of each.
pub fn check_params<F>(store: &ParamStore<f64>, h: f64, per_param: usize, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    grads.accumulate_into(&tape, &mut analytic_store);
    let mut work = store.clone();
    let mut report = GradReport::new();
    for id in store.ids() {
        let n = store.tensor(id).len();
        let step = n.div_ceil(per_param.max(1)).max(1);
        let idx: Vec<usize> = (0..n).step_by(step).collect();
        let full = analytic_store.tensor(id).grad.clone().unwrap_or_else(|| alloc::vec![0.0; n]);
        let analytic: Vec<f64> = idx.iter().map(|&j| full[j]).collect();
        let mut numeric = Vec::with_capacity(idx.len());
        for &j in &idx {
            let orig = work.tensor(id).data()[j];
            work.tensor_mut(id).data_mut()[j] = orig + h;
            let up = {
                let mut t = Tape::inference();
                let o = f(&mut t, &work)?;
                loss_value(&t, o)
            };
            work.tensor_mut(id).data_mut()[j] = orig - h;
            let down = {
                let mut t = Tape::inference();
                let o = f(&mut t, &work)?;
                loss_value(&t, o)
            };
            work.tensor_mut(id).data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        report.record(store.name(id), &analytic, &numeric);
    }
    Ok(report)
}
