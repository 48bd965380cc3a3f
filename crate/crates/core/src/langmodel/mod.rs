//! Instruction encoder and the latent observation/action decoder.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::Config;
use crate::nn::Linear;
use crate::tensor::{Init, ParamId, ParamStore, Tape, Var};
use crate::{Error, Real, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const RESERVED: [&str; 2] = ["<pad>", "<unk>"];

/// Token ↔ id table. Ids 0 and 1 are padding and unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Reserved entries followed by the distinct `words` in sorted order.
    pub fn build<I, W>(words: I) -> Self
    where
        I: IntoIterator<Item = W>,
        W: AsRef<str>,
    {
        let mut sorted: Vec<String> = words.into_iter().map(|w| w.as_ref().to_string()).collect();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.retain(|w| !RESERVED.contains(&w.as_str()));
        let tokens = RESERVED.iter().map(|r| r.to_string()).chain(sorted).collect();
        Self::from_tokens(tokens).expect("deduplicated")
    }

    /// Line `i` holds the token with id `i`.
    pub fn from_lines(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[..2] != RESERVED {
            return Err(Error::Invalid("vocabulary must start with <pad> and <unk>".into()));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("bad or duplicate vocabulary entry `{t}` on line {}", i + 1)));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn to_lines(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Tokenizes and maps to ids, unknown words to [`UNK`].
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let words = words(text);
        if words.is_empty() {
            return Err(Error::EmptyInstruction);
        }
        Ok(words.iter().map(|w| self.id(w)).collect())
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i).unwrap_or("<unk>")).collect::<Vec<_>>().join(" ")
    }
}

/// Lowercased words; whitespace and punctuation separate and are dropped.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Fixed sinusoidal encoding of step `t`.
pub fn positional_encoding(t: usize, width: usize) -> Vec<f64> {
    (0..width)
        .map(|k| {
            let freq = libm::pow(10000.0, -((k / 2 * 2) as f64) / width as f64);
            let a = t as f64 * freq;
            if k % 2 == 0 {
                libm::sin(a)
            } else {
                libm::cos(a)
            }
        })
        .collect()
}

/// LSTM cell; gate order input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    /// `[input, 4H]`, applied as `x · wx`.
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            wx: store.add(&format!("{name}.wx"), &[input, 4 * hidden], Init::FanIn(input), rng)?,
            wh: store.add(&format!("{name}.wh"), &[4 * hidden, hidden], Init::FanIn(hidden), rng)?,
            b: store.add(&format!("{name}.b"), &[4 * hidden], Init::Zeros, rng)?,
            input,
            hidden,
        })
    }

    pub fn zero_state<S: Real>(&self, tape: &mut Tape<S>) -> Result<LstmState> {
        let h = tape.constant(&[self.hidden], vec![S::zero(); self.hidden])?;
        Ok(LstmState { h, c: h })
    }

    /// Input projections of a whole sequence `x[l, input]`, one `[4H]` per row.
    pub fn project_inputs<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Vec<Var>> {
        let l = tape.shape(x)[0];
        let wx = tape.param(store, self.wx);
        let xw = tape.matmul(x, wx)?;
        (0..l)
            .map(|t| {
                let row = tape.slice(xw, t, 1)?;
                tape.reshape(row, &[4 * self.hidden])
            })
            .collect()
    }

    /// One step given the projected input `xw[4H]`.
    pub fn step<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, xw: Var, s: LstmState) -> Result<LstmState> {
        let h = self.hidden;
        let wh = tape.param(store, self.wh);
        let b = tape.param(store, self.b);
        let hh = tape.linear(wh, s.h)?;
        let g = tape.add(xw, hh)?;
        let g = tape.add(g, b)?;
        let i = tape.slice(g, 0, h)?;
        let i = tape.sigmoid(i);
        let f = tape.slice(g, h, h)?;
        let f = tape.sigmoid(f);
        let cand = tape.slice(g, 2 * h, h)?;
        let cand = tape.tanh(cand);
        let o = tape.slice(g, 3 * h, h)?;
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, s.c)?;
        let write = tape.mul(i, cand)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Encoder states for one instruction.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[l, 2H]`; row `i` is `[forward_i, backward_i]`.
    pub states: Var,
    /// `[2H]`: final forward state then final backward state.
    pub summary: Var,
    pub len: usize,
}

/// Latent vectors for one decoding step.
#[derive(Clone, Debug)]
pub struct LatentStep {
    /// `[3H]` = attended context then decoder state.
    pub obs: Var,
    pub act: Var,
    pub attn_obs: Vec<f64>,
    pub attn_act: Vec<f64>,
}

/// Embedding plus bidirectional LSTM.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub embed: ParamId,
    pub fwd: Lstm,
    pub bwd: Lstm,
    pub hidden: usize,
    pub max_tokens: usize,
}

impl Encoder {
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, cfg: &Config, vocab_len: usize, rng: &mut R) -> Result<Self> {
        let (e, h) = (cfg.embed_dim, cfg.hidden);
        Ok(Self {
            embed: store.add("lang.embed", &[vocab_len, e], Init::FanIn(1), rng)?,
            fwd: Lstm::new(store, "lang.enc_fwd", e, h, rng)?,
            bwd: Lstm::new(store, "lang.enc_bwd", e, h, rng)?,
            hidden: h,
            max_tokens: cfg.max_tokens,
        })
    }

    pub fn encode<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, tokens: &[usize]) -> Result<EncoderOutput> {
        let l = tokens.len();
        if l == 0 {
            return Err(Error::EmptyInstruction);
        }
        if l > self.max_tokens {
            return Err(Error::InstructionTooLong { len: l, max: self.max_tokens });
        }
        let table = tape.param(store, self.embed);
        let x = tape.embedding(table, tokens)?;
        let xf = self.fwd.project_inputs(tape, store, x)?;
        let xb = self.bwd.project_inputs(tape, store, x)?;
        let mut s = self.fwd.zero_state(tape)?;
        let mut fwd = Vec::with_capacity(l);
        for &xw in &xf {
            s = self.fwd.step(tape, store, xw, s)?;
            fwd.push(s.h);
        }
        let mut s = self.bwd.zero_state(tape)?;
        let mut bwd = vec![s.h; l];
        for t in (0..l).rev() {
            s = self.bwd.step(tape, store, xb[t], s)?;
            bwd[t] = s.h;
        }
        let mut rows = Vec::with_capacity(2 * l);
        for t in 0..l {
            rows.push(fwd[t]);
            rows.push(bwd[t]);
        }
        let flat = tape.concat(&rows)?;
        let states = tape.reshape(flat, &[l, 2 * self.hidden])?;
        let summary = tape.concat(&[fwd[l - 1], bwd[0]])?;
        Ok(EncoderOutput { states, summary, len: l })
    }
}

/// Encoder plus the positional-encoding-driven decoder with two attention heads.
#[derive(Clone, Debug)]
pub struct LanguageModel {
    pub encoder: Encoder,
    pub init: Linear,
    pub dec: Lstm,
    /// Bilinear attention matrices `[2H, H]` for the observation and action heads.
    pub att_obs: ParamId,
    pub att_act: ParamId,
    pub hidden: usize,
    pub embed_dim: usize,
    pub steps: usize,
}

impl LanguageModel {
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, cfg: &Config, vocab_len: usize, rng: &mut R) -> Result<Self> {
        let (e, h) = (cfg.embed_dim, cfg.hidden);
        Ok(Self {
            encoder: Encoder::new(store, cfg, vocab_len, rng)?,
            init: Linear::new(store, "lang.dec_init", 2 * h, h, true, rng)?,
            dec: Lstm::new(store, "lang.dec", e, h, rng)?,
            att_obs: store.add("lang.att_obs", &[2 * h, h], Init::FanIn(h), rng)?,
            att_act: store.add("lang.att_act", &[2 * h, h], Init::FanIn(h), rng)?,
            hidden: h,
            embed_dim: e,
            steps: cfg.t_max,
        })
    }

    /// Width of every latent vector.
    pub fn latent_width(&self) -> usize {
        3 * self.hidden
    }

    pub fn encode<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, tokens: &[usize]) -> Result<EncoderOutput> {
        self.encoder.encode(tape, store, tokens)
    }

    /// Decoder state before step 1: a learned projection of the summary.
    pub fn initial_state<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, enc: &EncoderOutput) -> Result<LstmState> {
        let h = self.init.forward(tape, store, enc.summary)?;
        let h = tape.tanh(h);
        let c = tape.constant(&[self.hidden], vec![S::zero(); self.hidden])?;
        Ok(LstmState { h, c })
    }

    /// Decoding step `t` in `1..=steps`.
    pub fn decode_step<S: Real>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        t: usize,
        state: LstmState,
        enc: &EncoderOutput,
    ) -> Result<(LatentStep, LstmState)> {
        if t == 0 || t > self.steps {
            return Err(Error::OutOfRange {
                what: "decoding step",
                value: t as i64,
                range: format!("1..={}", self.steps),
            });
        }
        let pe: Vec<S> = positional_encoding(t, self.embed_dim).into_iter().map(S::from_f64).collect();
        let pe = tape.constant(&[1, self.embed_dim], pe)?;
        let xw = self.dec.project_inputs(tape, store, pe)?[0];
        let next = self.dec.step(tape, store, xw, state)?;
        let (obs, attn_obs) = self.attend(tape, store, self.att_obs, next.h, enc)?;
        let (act, attn_act) = self.attend(tape, store, self.att_act, next.h, enc)?;
        Ok((
            LatentStep {
                obs,
                act,
                attn_obs,
                attn_act,
            },
            next,
        ))
    }

    fn attend<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, w: ParamId, h: Var, enc: &EncoderOutput) -> Result<(Var, Vec<f64>)> {
        let w = tape.param(store, w);
        let q = tape.linear(w, h)?;
        let scores = tape.linear(enc.states, q)?;
        let alpha = tape.softmax(scores, &[0])?;
        let st = tape.transpose(enc.states)?;
        let ctx = tape.linear(st, alpha)?;
        let out = tape.concat(&[ctx, h])?;
        let weights = tape.data(alpha).iter().map(|v| v.as_f64()).collect();
        Ok((out, weights))
    }

    /// Encodes `tokens` and decodes all `steps` latent pairs.
    pub fn run<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, tokens: &[usize]) -> Result<Vec<LatentStep>> {
        let enc = self.encode(tape, store, tokens)?;
        let mut state = self.initial_state(tape, store, &enc)?;
        let mut out = Vec::with_capacity(self.steps);
        for t in 1..=self.steps {
            let (step, next) = self.decode_step(tape, store, t, state, &enc)?;
            out.push(step);
            state = next;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
