//! Checkpoint files: the config a model was built with, the vocabulary size
//! and its parameters.
//!
//! Layout: `BNCK`, u32 vocabulary size, u32 config length, config text, then
//! the parameter block of [`encode_checkpoint`]. Integers are little endian.

use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use beliefnav_core::agent::Model;
use beliefnav_core::config::Config;
use beliefnav_core::rng::derive;
use beliefnav_core::tensor::{decode_checkpoint, encode_checkpoint, ParamStore};

const MAGIC: &[u8; 4] = b"BNCK";
const INIT_LABEL: u64 = 0x696e_6974;

/// A model with its parameters and settings.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: Config,
    pub vocab_len: usize,
    pub store: ParamStore<f32>,
    pub model: Model,
}

impl Checkpoint {
    /// Freshly initialized from `cfg.seed`.
    pub fn init(cfg: &Config, vocab_len: usize) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = Model::new(&mut store, cfg, vocab_len, &mut derive(cfg.seed, INIT_LABEL))?;
        Ok(Self {
            config: cfg.clone(),
            vocab_len,
            store,
            model,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config.to_text();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.vocab_len as u32).to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&encode_checkpoint(&self.store));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= 12 && &bytes[..4] == MAGIC, "not a checkpoint file");
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        let vocab_len = word(4);
        let len = word(8);
        ensure!(bytes.len() >= 12 + len, "truncated checkpoint header");
        let text = std::str::from_utf8(&bytes[12..12 + len]).context("checkpoint config is not UTF-8")?;
        let config = Config::from_text(text)?;
        let mut ck = Self::init(&config, vocab_len)?;
        ck.store.load(&decode_checkpoint(&bytes[12 + len..])?)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
    }

    /// Variant name used in tables: `xyt`, `xy` or `lingunet`.
    pub fn label(&self) -> String {
        match &self.model {
            Model::Filter(_) if self.config.headings == 1 => "xy".into(),
            Model::Filter(_) => "xyt".into(),
            Model::Lingunet(_) => "lingunet".into(),
        }
    }
}
