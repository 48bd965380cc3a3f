//! Small parameterised layers over the tape.

use alloc::format;

use rand::Rng;

use crate::tensor::{Init, ParamId, ParamStore, Tape, Var};
use crate::{Real, Result};

/// `y = W x + b` with `W: [out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, name: &str, inp: usize, out: usize, bias: bool, rng: &mut R) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), &[out, inp], Init::FanIn(inp), rng)?;
        let b = if bias {
            Some(store.add(&format!("{name}.b"), &[out], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self { w, b, inp, out })
    }

    /// `x: [in]` to `[out]`.
    pub fn forward<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.linear(w, x)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }

    /// Column batch `x: [in, n]` to `[out, n]`.
    pub fn forward_cols<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(w, x)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_channel_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Square convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), &[cout, cin, k, k], Init::FanIn(cin * k * k), rng)?;
        let b = store.add(&format!("{name}.b"), &[cout], Init::Zeros, rng)?;
        Ok(Self { w, b, stride, pad })
    }

    pub fn forward<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.conv2d(x, w, self.stride, self.pad)?;
        let b = tape.param(store, self.b);
        tape.add_channel_bias(y, b)
    }
}

/// Transposed convolution with bias; kernel `[cin, cout, k, k]`.
#[derive(Clone, Debug)]
pub struct Deconv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Deconv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan = (cin * k * k / (stride * stride)).max(1);
        let w = store.add(&format!("{name}.w"), &[cin, cout, k, k], Init::FanIn(fan), rng)?;
        let b = store.add(&format!("{name}.b"), &[cout], Init::Zeros, rng)?;
        Ok(Self { w, b, stride, pad })
    }

    pub fn forward<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.conv_transpose2d(x, w, self.stride, self.pad)?;
        let b = tape.param(store, self.b);
        tape.add_channel_bias(y, b)
    }
}
