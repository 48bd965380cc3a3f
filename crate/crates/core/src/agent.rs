//! Complete models: the filter agent and the single-pass LingUNet goal
//! predictor, plus per-episode geometry and rendering.

use alloc::vec::Vec;

use rand::Rng;

use crate::config::{Config, ModelKind};
use crate::filter::{BayesFilter, FilterRun, LingUnet};
use crate::gridsim::{render_panorama, Episode, Panorama, Pose};
use crate::langmodel::{Encoder, LanguageModel};
use crate::mapper::{MapGeometry, Mapper, SemanticMap};
use crate::nn::Linear;
use crate::policy::Policy;
use crate::tensor::{ParamStore, Tape, Var};
use crate::{Real, Result};

/// Levels of the direct goal prediction network.
pub const BASELINE_LEVELS: usize = 5;

/// An episode with its instruction already mapped to vocabulary ids.
#[derive(Clone, Debug)]
pub struct Instance {
    pub episode: Episode,
    pub tokens: Vec<usize>,
}

/// Map grid centered on the episode start.
pub fn geometry(episode: &Episode, cfg: &Config) -> MapGeometry {
    let s = episode.start_pose();
    MapGeometry::centered(s.x, s.y, cfg.map_size, cfg.cell_size)
}

pub fn render<R: Rng>(episode: &Episode, pose: &Pose, cfg: &Config, rng: &mut R) -> Result<Panorama> {
    render_panorama(&episode.world, pose, cfg.pano_scans, cfg.pano_columns, cfg.fov_deg(), cfg.p_miss, rng)
}

#[derive(Clone, Debug)]
pub struct FilterAgent {
    pub mapper: Mapper,
    pub lang: LanguageModel,
    pub filter: BayesFilter,
    pub policy: Policy,
}

impl FilterAgent {
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, cfg: &Config, vocab_len: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            mapper: Mapper::new(store, cfg, rng)?,
            lang: LanguageModel::new(store, cfg, vocab_len, rng)?,
            filter: BayesFilter::new(store, cfg, rng)?,
            policy: Policy::new(store, cfg, rng)?,
        })
    }

    /// Full `T`-step filter run from the episode start over `map`.
    pub fn run_filter<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, inst: &Instance, map: &SemanticMap) -> Result<FilterRun> {
        let start = inst.episode.start_pose();
        self.filter.run(tape, store, &self.lang, &inst.tokens, map, &start, self.lang.steps)
    }
}

/// Goal and path visitation distributions from one pass over the map.
#[derive(Clone, Copy, Debug)]
pub struct BaselineOutput {
    /// `[Y, X]`, sums to one.
    pub goal: Var,
    /// `[Y, X]`, sums to one.
    pub visitation: Var,
}

/// Sentence encoding and map to goal, without decoder or motion model.
#[derive(Clone, Debug)]
pub struct GoalBaseline {
    pub mapper: Mapper,
    pub encoder: Encoder,
    pub text: Linear,
    pub net: LingUnet,
}

impl GoalBaseline {
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, cfg: &Config, vocab_len: usize, rng: &mut R) -> Result<Self> {
        let width = BASELINE_LEVELS * cfg.baseline_hidden;
        Ok(Self {
            mapper: Mapper::new(store, cfg, rng)?,
            encoder: Encoder::new(store, cfg, vocab_len, rng)?,
            text: Linear::new(store, "baseline.text", 2 * cfg.hidden, width, true, rng)?,
            net: LingUnet::new(
                store,
                "baseline.lingunet",
                cfg.map_channels + 1,
                cfg.baseline_hidden,
                BASELINE_LEVELS,
                2,
                width,
                rng,
            )?,
        })
    }

    /// The map is zero-padded to a multiple of `2^levels` and the output
    /// cropped back.
    pub fn forward<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, tokens: &[usize], map: &SemanticMap) -> Result<BaselineOutput> {
        let n = map.geometry.size;
        let unit = 1 << BASELINE_LEVELS;
        let padded = n.div_ceil(unit) * unit;
        let enc = self.encoder.encode(tape, store, tokens)?;
        let text = self.text.forward(tape, store, enc.summary)?;
        let x = BayesFilter::likelihood_input(tape, map)?;
        let x = tape.window2d(x, padded, padded)?;
        let y = self.net.forward(tape, store, x, text)?;
        let y = tape.window2d(y, n, n)?;
        let p = tape.softmax(y, &[1, 2])?;
        let goal = tape.slice(p, 0, 1)?;
        let goal = tape.reshape(goal, &[n, n])?;
        let visitation = tape.slice(p, 1, 1)?;
        let visitation = tape.reshape(visitation, &[n, n])?;
        Ok(BaselineOutput { goal, visitation })
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    Filter(FilterAgent),
    Lingunet(GoalBaseline),
}

impl Model {
    /// Builds the model named by `cfg.model`, registering its parameters.
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, cfg: &Config, vocab_len: usize, rng: &mut R) -> Result<Self> {
        Ok(match cfg.model {
            ModelKind::Filter => Model::Filter(FilterAgent::new(store, cfg, vocab_len, rng)?),
            ModelKind::Lingunet => Model::Lingunet(GoalBaseline::new(store, cfg, vocab_len, rng)?),
        })
    }

    pub fn mapper(&self) -> &Mapper {
        match self {
            Model::Filter(a) => &a.mapper,
            Model::Lingunet(b) => &b.mapper,
        }
    }
}
