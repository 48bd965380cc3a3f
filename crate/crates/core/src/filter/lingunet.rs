//! Language-conditioned U-Net: each skip connection is filtered by a 1x1
//! kernel generated from a slice of the text vector.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::nn::{Conv, Deconv, Linear};
use crate::tensor::{ParamStore, Tape, Var};
use crate::{Error, Real, Result};

#[derive(Clone, Debug)]
pub struct LingUnet {
    pub down: Vec<Conv>,
    pub text: Vec<Linear>,
    pub up: Vec<Deconv>,
    pub head: Conv,
    pub hidden: usize,
    pub text_width: usize,
    pub out_channels: usize,
}

impl LingUnet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        in_channels: usize,
        hidden: usize,
        levels: usize,
        out_channels: usize,
        text_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if levels == 0 || text_width % levels != 0 {
            return Err(Error::Invalid(format!("text width {text_width} does not split into {levels} chunks")));
        }
        let chunk = text_width / levels;
        let mut down = Vec::with_capacity(levels);
        let mut text = Vec::with_capacity(levels);
        let mut up = Vec::with_capacity(levels);
        for l in 0..levels {
            let cin = if l == 0 { in_channels } else { hidden };
            down.push(Conv::new(store, &format!("{name}.down{l}"), cin, hidden, 3, 2, 1, rng)?);
            text.push(Linear::new(store, &format!("{name}.text{l}"), chunk, hidden * hidden, true, rng)?);
            let cin = if l + 1 == levels { hidden } else { 2 * hidden };
            up.push(Deconv::new(store, &format!("{name}.up{l}"), cin, hidden, 4, 2, 1, rng)?);
        }
        let head = Conv::new(store, &format!("{name}.head"), hidden, out_channels, 1, 1, 0, rng)?;
        Ok(Self {
            down,
            text,
            up,
            head,
            hidden,
            text_width,
            out_channels,
        })
    }

    pub fn levels(&self) -> usize {
        self.down.len()
    }

    /// Downsampling path; independent of the text so it can be shared across
    /// several decodes of the same input.
    pub fn encode<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Vec<Var>> {
        let s = tape.shape(x);
        let div = 1usize << self.levels();
        if s.len() != 3 || s[1] % div != 0 || s[2] % div != 0 {
            return Err(Error::Geometry(format!("input {s:?} is not divisible by {div}")));
        }
        let mut feats = Vec::with_capacity(self.levels());
        let mut h = x;
        for conv in &self.down {
            let y = conv.forward(tape, store, h)?;
            h = tape.relu(y);
            feats.push(h);
        }
        Ok(feats)
    }

    /// Pre-activation output `[out_channels, H, W]` for the text vector `text`.
    pub fn decode<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, feats: &[Var], text: Var) -> Result<Var> {
        if tape.shape(text) != [self.text_width] {
            return Err(Error::shape("lingunet", format!("text {:?}, expected [{}]", tape.shape(text), self.text_width)));
        }
        let chunk = self.text_width / self.levels();
        let hid = self.hidden;
        let mut filtered = Vec::with_capacity(self.levels());
        for (l, &f) in feats.iter().enumerate() {
            let t = tape.slice(text, l * chunk, chunk)?;
            let k = self.text[l].forward(tape, store, t)?;
            let k = tape.reshape(k, &[hid, hid])?;
            let s = tape.shape(f).to_vec();
            let flat = tape.reshape(f, &[1, hid, s[1] * s[2]])?;
            let y = tape.channel_mix(flat, k)?;
            filtered.push(tape.reshape(y, &s)?);
        }
        let mut u: Option<Var> = None;
        for l in (0..self.levels()).rev() {
            let inp = match u {
                None => filtered[l],
                Some(u) => tape.concat(&[u, filtered[l]])?,
            };
            let y = self.up[l].forward(tape, store, inp)?;
            u = Some(tape.relu(y));
        }
        let u = u.expect("at least one level");
        self.head.forward(tape, store, u)
    }

    pub fn forward<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var, text: Var) -> Result<Var> {
        let feats = self.encode(tape, store, x)?;
        self.decode(tape, store, &feats, text)
    }
}
