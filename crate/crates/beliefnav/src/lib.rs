//! File formats, training and evaluation drivers for `beliefnav-core`.
//!
//! - [`dataset`]: corpus generation and the on-disk episode index.
//! - [`checkpoint`]: model files.
//! - [`train`]: the training loop and its metric log.
//! - [`evaluate`]: goal prediction tables and navigation metrics.
//! - [`dump`]: belief, map and attention artifacts.

pub mod checkpoint;
pub mod dataset;
pub mod dump;
pub mod evaluate;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use beliefnav_core::config::Config;

/// Defaults overlaid with the `key = value` file at `path`, if any.
pub fn load_config(path: Option<&Path>) -> Result<Config> {
    let mut cfg = Config::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", p.display()))?;
    }
    Ok(cfg)
}
