//! Flat `key = value` configuration shared by every component.
//!
//! Each key maps to one field of [`Config`]. [`Config::set`] parses a single
//! assignment and rejects unknown keys, [`Config::entries`] renders the
//! current values back in the same syntax and [`KEYS`] documents every key.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Goal,
    Vln,
}

impl core::str::FromStr for Regime {
    type Err = ();
    fn from_str(s: &str) -> core::result::Result<Self, ()> {
        match s {
            "goal" => Ok(Regime::Goal),
            "vln" => Ok(Regime::Vln),
            _ => Err(()),
        }
    }
}

impl core::fmt::Display for Regime {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Regime::Goal => "goal",
            Regime::Vln => "vln",
        })
    }
}

/// Which goal predictor a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Mapper, language model, Bayes filter and policy.
    Filter,
    /// Mapper, sentence encoder and a single-pass language-conditioned U-Net.
    Lingunet,
}

impl core::str::FromStr for ModelKind {
    type Err = ();
    fn from_str(s: &str) -> core::result::Result<Self, ()> {
        match s {
            "filter" => Ok(ModelKind::Filter),
            "lingunet" => Ok(ModelKind::Lingunet),
            _ => Err(()),
        }
    }
}

impl core::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            ModelKind::Filter => "filter",
            ModelKind::Lingunet => "lingunet",
        })
    }
}

/// Where the policy's belief inputs come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeliefSource {
    /// The filter run over the current map.
    Filter,
    /// Deltas on the demonstrator trajectory, padded with the goal.
    Oracle,
}

impl core::str::FromStr for BeliefSource {
    type Err = ();
    fn from_str(s: &str) -> core::result::Result<Self, ()> {
        match s {
            "filter" => Ok(BeliefSource::Filter),
            "oracle" => Ok(BeliefSource::Oracle),
            _ => Err(()),
        }
    }
}

impl core::fmt::Display for BeliefSource {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            BeliefSource::Filter => "filter",
            BeliefSource::Oracle => "oracle",
        })
    }
}

macro_rules! config {
    ($( $(#[doc = $doc:literal])+ $name:ident : $ty:ty = $default:expr; )*) => {
        /// All tunable settings. See [`KEYS`] for documentation of each field.
        #[derive(Clone, Debug, PartialEq)]
        pub struct Config {
            $( $(#[doc = $doc])+ pub $name: $ty, )*
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $( $name: $default, )* }
            }
        }

        /// `(key, description)` for every configuration key, in file order.
        pub const KEYS: &[(&str, &str)] = &[
            $( (stringify!($name), concat!($($doc, " "),+)), )*
        ];

        impl Config {
            /// Parses and assigns one `key = value` pair.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($name) => {
                        self.$name = value.trim().parse::<$ty>().map_err(|_| {
                            Error::Config(format!("bad value `{value}` for `{key}`"))
                        })?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// Current values as `(key, value)` strings.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                alloc::vec![ $( (stringify!($name), self.$name.to_string()), )* ]
            }
        }
    };
}

config! {
    /// Side of the square world in cells (at least 16).
    world_size: usize = 24;
    /// Side length of one world and map cell in meters.
    cell_size: f64 = 0.5;
    /// Directional scans per panorama.
    pano_scans: usize = 12;
    /// Columns per scan.
    pano_columns: usize = 16;
    /// Horizontal field of view of one scan in degrees; 0 means 360 / pano_scans.
    pano_fov_deg: f64 = 0.0;
    /// Probability that a rendered column loses its depth reading.
    p_miss: f64 = 0.05;
    /// Columns averaged into one projected feature column.
    pool_factor: usize = 2;
    /// Maximum number of edges in a ground-truth trajectory; also the number of filter steps.
    t_max: usize = 6;
    /// Minimum number of edges in a ground-truth trajectory.
    min_path_edges: usize = 3;
    /// Maximum distance in meters between the goal and the landmark named by the stop clause.
    stop_landmark_radius: f64 = 2.0;
    /// Maximum distance in meters at which a segment clause may reference a landmark.
    clause_landmark_radius: f64 = 3.0;
    /// Side of the square map in cells; must hold the world with the start at its center.
    map_size: usize = 48;
    /// Channels of the per-column semantic feature embedding.
    feat_channels: usize = 16;
    /// Channels of the map state.
    map_channels: usize = 32;
    /// Spatial dropout probability on map state transitions (0 disables).
    map_dropout: f64 = 0.0;
    /// Word embedding width (also the positional encoding width).
    embed_dim: usize = 32;
    /// Hidden width of the encoder and decoder LSTMs.
    hidden: usize = 64;
    /// Longest accepted instruction in tokens.
    max_tokens: usize = 40;
    /// Heading bins of the belief (1 gives the position-only filter).
    headings: usize = 4;
    /// Side of the learned motion kernel in cells (odd).
    kernel_size: usize = 7;
    /// Bilinear upscale factor applied to the motion kernel footprint.
    kernel_upscale: usize = 1;
    /// Hidden channels of the motion kernel network.
    motion_hidden: usize = 16;
    /// Hidden channels of each observation network level.
    lingunet_hidden: usize = 16;
    /// Hidden channels of each level of the direct goal prediction baseline.
    baseline_hidden: usize = 16;
    /// Hidden width of the policy perceptron.
    policy_hidden: usize = 32;
    /// Gaussian neighborhood scale in meters for policy belief features.
    policy_sigma: f64 = 0.5;
    /// Model trained or evaluated: filter or lingunet.
    model: ModelKind = ModelKind::Filter;
    /// Training regime: goal or vln.
    regime: Regime = Regime::Goal;
    /// Policy belief inputs during vln training: filter or oracle.
    belief_source: BeliefSource = BeliefSource::Filter;
    /// Adam learning rate.
    lr: f64 = 1e-3;
    /// Adam first moment decay.
    beta1: f64 = 0.9;
    /// Adam second moment decay.
    beta2: f64 = 0.999;
    /// Adam denominator floor.
    adam_eps: f64 = 1e-8;
    /// Decoupled weight decay.
    weight_decay: f64 = 1e-7;
    /// Episodes per optimisation step.
    batch_size: usize = 5;
    /// Optimisation steps.
    iterations: usize = 8000;
    /// Master seed; every random stream derives from it.
    seed: u64 = 0;
    /// Gaussian smoothing of trajectory targets in cells (0 gives delta targets).
    target_sigma: f64 = 1.0;
    /// Weight of the filter loss.
    filter_weight: f64 = 1.0;
    /// Weight of the policy loss.
    policy_weight: f64 = 1.0;
    /// Outer steps per episode that contribute to the filter loss in the goal regime (0 uses all).
    loss_outer_steps: usize = 1;
    /// Outer (map update) steps per goal prediction rollout.
    outer_steps: usize = 8;
    /// Probability of stepping toward the goal in goal rollouts.
    p_toward_goal: f64 = 0.5;
    /// Probability of following the policy sample in navigation rollouts.
    p_policy: f64 = 0.5;
    /// Gaussian scale in meters of the hand-coded goal heuristic.
    handcoded_sigma: f64 = 1.0;
    /// Success radius in meters.
    success_m: f64 = 1.5;
    /// Iterations between validation runs (0 disables).
    val_every: usize = 500;
    /// Validation episodes per run.
    val_episodes: usize = 50;
    /// Seed of the generated corpus, independent of the training seed.
    data_seed: u64 = 0;
    /// Worlds in the training split.
    train_worlds: usize = 200;
    /// Episodes sampled per training world.
    episodes_per_world: usize = 10;
    /// Held-out episodes drawn from training worlds.
    val_seen_episodes: usize = 100;
    /// Worlds in the unseen validation split.
    val_unseen_worlds: usize = 20;
    /// Episodes per unseen validation world.
    val_unseen_per_world: usize = 5;
}

impl Config {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    pub fn fov_deg(&self) -> f64 {
        if self.pano_fov_deg > 0.0 {
            self.pano_fov_deg
        } else {
            360.0 / self.pano_scans as f64
        }
    }

    /// Side of the upscaled motion kernel actually applied to the belief.
    pub fn effective_kernel(&self) -> usize {
        self.kernel_upscale * (self.kernel_size + 1) - 1
    }

    /// Width of the observation and action vectors.
    pub fn latent_width(&self) -> usize {
        3 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.world_size < 16 {
            return bad("world_size must be at least 16");
        }
        if self.pano_scans < 4 || self.pano_columns < 8 {
            return bad("panoramas need at least 4 scans of 8 columns");
        }
        if self.pool_factor == 0 || self.pano_columns % self.pool_factor != 0 {
            return bad("pool_factor must divide pano_columns");
        }
        if self.min_path_edges < 1 || self.min_path_edges > self.t_max {
            return bad("need 1 <= min_path_edges <= t_max");
        }
        if self.map_size % 8 != 0 {
            return bad("map_size must be divisible by 8");
        }
        if self.map_size < 2 * self.world_size {
            return bad("map_size must be at least twice world_size");
        }
        if self.kernel_size % 2 == 0 || self.kernel_upscale == 0 {
            return bad("kernel_size must be odd and kernel_upscale positive");
        }
        if self.headings == 0 || self.batch_size == 0 || self.outer_steps == 0 {
            return bad("headings, batch_size and outer_steps must be positive");
        }
        if !(0.0..1.0).contains(&self.map_dropout) {
            return bad("map_dropout must lie in [0, 1)");
        }
        if self.lr < 0.0 || self.cell_size <= 0.0 || self.success_m <= 0.0 {
            return bad("rates and lengths must be positive");
        }
        Ok(())
    }
}
