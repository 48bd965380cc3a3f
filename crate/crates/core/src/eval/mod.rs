//! Navigation metrics, goal prediction scoring and the two non-learned
//! baselines.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::agent::{FilterAgent, Instance, Model};
use crate::config::{BeliefSource, Config};
use crate::filter::{predict_goal, FilterRun};
use crate::gridsim::{Episode, ViewpointId};
use crate::mapper::{MapGeometry, SemanticMap};
use crate::tensor::{ParamStore, Tape};
use crate::trainer::{goal_rollout, vln_rollout, Driver};
use crate::{Error, Real, Result};

/// Distances of one finished navigation episode, in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VlnOutcome {
    /// Summed hop lengths of the taken path.
    pub length: f64,
    /// Final distance to the goal.
    pub nav_error: f64,
    /// Smallest distance to the goal along the path.
    pub oracle_error: f64,
    /// Shortest path length from start to goal.
    pub shortest: f64,
}

impl VlnOutcome {
    pub fn from_path(episode: &Episode, path: &[ViewpointId], length: f64) -> Result<Self> {
        let g = &episode.graph;
        let last = *path.last().ok_or_else(|| Error::Invalid("empty path".into()))?;
        let (gx, gy) = g.pos[episode.goal()];
        let dist = |v: ViewpointId| {
            let (x, y) = g.pos[v];
            libm::hypot(x - gx, y - gy)
        };
        Ok(Self {
            length,
            nav_error: dist(last),
            oracle_error: path.iter().map(|&v| dist(v)).fold(f64::INFINITY, f64::min),
            shortest: g.path_length(&episode.path),
        })
    }
}

/// Success weighted by `shortest / max(taken, shortest)`.
pub fn spl_term(success: bool, shortest: f64, taken: f64) -> f64 {
    if !success {
        return 0.0;
    }
    let denom = taken.max(shortest);
    if denom <= 0.0 {
        1.0
    } else {
        shortest / denom
    }
}

/// Means over episodes; rates are fractions in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VlnMetrics {
    pub episodes: usize,
    pub tl: f64,
    pub ne: f64,
    pub os: f64,
    pub sr: f64,
    pub spl: f64,
}

impl VlnMetrics {
    /// Success means a distance strictly below `threshold`.
    pub fn aggregate(outcomes: &[VlnOutcome], threshold: f64) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Invalid("no episodes to aggregate".into()));
        }
        let n = outcomes.len() as f64;
        let mut m = Self {
            episodes: outcomes.len(),
            tl: 0.0,
            ne: 0.0,
            os: 0.0,
            sr: 0.0,
            spl: 0.0,
        };
        for o in outcomes {
            let success = o.nav_error < threshold;
            m.tl += o.length / n;
            m.ne += o.nav_error / n;
            m.os += f64::from(u8::from(o.oracle_error < threshold)) / n;
            m.sr += f64::from(u8::from(success)) / n;
            m.spl += spl_term(success, o.shortest, o.length) / n;
        }
        Ok(m)
    }

    /// `0 ≤ SPL ≤ SR ≤ OS ≤ 1`, with a rounding allowance for the sums.
    pub fn consistent(&self) -> bool {
        let tol = 1e-12;
        self.spl >= 0.0 && self.spl <= self.sr + tol && self.sr <= self.os + tol && self.os <= 1.0 + tol
    }
}

/// Walks uniformly random edges for a number of hops drawn uniformly from
/// `min_path_edges..=t_max`, then stops.
pub fn random_walk<R: Rng>(episode: &Episode, cfg: &Config, rng: &mut R) -> Result<VlnOutcome> {
    let g = &episode.graph;
    let hops = rng.gen_range(cfg.min_path_edges..=cfg.t_max);
    let mut path = alloc::vec![episode.start()];
    let mut length = 0.0;
    for _ in 0..hops {
        let cur = *path.last().expect("nonempty");
        let next = *g.adj[cur].choose(rng).ok_or(Error::UnknownViewpoint(cur))?;
        length += g.dist(cur, next);
        path.push(next);
    }
    VlnOutcome::from_path(episode, &path, length)
}

/// Greedy navigation episode without gradient recording, with the largest
/// `|Σ b − 1|` over the beliefs it consumed.
pub fn navigate<S: Real, R: Rng>(
    store: &ParamStore<S>,
    agent: &FilterAgent,
    inst: &Instance,
    cfg: &Config,
    source: BeliefSource,
    rng: &mut R,
) -> Result<(VlnOutcome, f64)> {
    let mut tape = Tape::inference();
    let rec = vln_rollout(&mut tape, store, agent, inst, cfg, source, Driver::Greedy, false, rng)?;
    let mass = rec
        .beliefs
        .iter()
        .flatten()
        .map(|&v| libm::fabs(tape.data(v).iter().map(|x| x.as_f64()).sum::<f64>() - 1.0))
        .fold(0.0, f64::max);
    Ok((VlnOutcome::from_path(&inst.episode, &rec.walk.path, rec.walk.length)?, mass))
}

/// Largest `|Σ b − 1|` over every predicted and updated belief of a run.
pub fn mass_error<S: Real>(tape: &Tape<S>, run: &FilterRun) -> f64 {
    run.predicted
        .iter()
        .chain(&run.beliefs)
        .map(|&v| {
            let s: f64 = tape.data(v).iter().map(|x| x.as_f64()).sum();
            libm::fabs(s - 1.0)
        })
        .fold(0.0, f64::max)
}

/// Angles of the discretized ring of radius `radius`: `ceil(2πr / cell)`
/// points counterclockwise from east.
pub fn ring_angles(radius: f64, cell: f64) -> Vec<f64> {
    let n = libm::ceil(2.0 * core::f64::consts::PI * radius / cell).max(1.0) as usize;
    (0..n).map(|i| 2.0 * core::f64::consts::PI * i as f64 / n as f64).collect()
}

/// Relative margin by which a later ring point must win to replace an
/// earlier one, so that mirror-image scores differing only by summation
/// rounding count as ties.
pub const TIE_MARGIN: f64 = 1e-9;

/// Ring point around `start` with the largest Gaussian-weighted observed
/// area; ties go to the smallest angle.
pub fn handcoded_goal(observed: &[bool], geometry: &MapGeometry, start: (f64, f64), radius: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(radius > 0.0 && sigma > 0.0) {
        return Err(Error::Invalid("radius and sigma must be positive".into()));
    }
    if observed.len() != geometry.cells() {
        return Err(Error::Geometry("mask does not match the map".into()));
    }
    let n = geometry.size;
    let cells: Vec<(f64, f64)> = (0..n * n)
        .filter(|&i| observed[i])
        .map(|i| geometry.center(i % n, i / n))
        .collect();
    let mut best: Option<(f64, (f64, f64))> = None;
    for a in ring_angles(radius, geometry.cell) {
        let p = (start.0 + radius * libm::cos(a), start.1 + radius * libm::sin(a));
        let score: f64 = cells
            .iter()
            .map(|&(x, y)| {
                let d2 = (x - p.0) * (x - p.0) + (y - p.1) * (y - p.1);
                libm::exp(-d2 / (2.0 * sigma * sigma))
            })
            .sum();
        if best.is_none_or(|(b, _)| score > b + TIE_MARGIN * libm::fabs(b)) {
            best = Some((score, p));
        }
    }
    Ok(best.map_or(start, |(_, p)| p))
}

/// Position predicted as the goal from one map, and the filter's largest
/// mass error (0 for the direct predictor).
pub fn predicted_goal<S: Real>(tape: &mut Tape<S>, store: &ParamStore<S>, model: &Model, inst: &Instance, map: &SemanticMap) -> Result<((f64, f64), f64)> {
    match model {
        Model::Filter(agent) => {
            let run = agent.run_filter(tape, store, inst, map)?;
            let g = predict_goal(tape.data(run.last()), agent.filter.headings, &map.geometry);
            Ok(((g.x, g.y), mass_error(tape, &run)))
        }
        Model::Lingunet(net) => {
            let out = net.forward(tape, store, &inst.tokens, map)?;
            let g = predict_goal(tape.data(out.goal), 1, &map.geometry);
            Ok(((g.x, g.y), 0.0))
        }
    }
}

/// Goal prediction after one outer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoalStepResult {
    /// Observed map area in m².
    pub area: f64,
    pub goal_seen: bool,
    /// Error of the model's prediction in meters.
    pub error: f64,
    /// Error of the hand-coded ring heuristic on the same map.
    pub handcoded_error: f64,
    /// Largest `|Σ b − 1|` of the filter run.
    pub mass_error: f64,
}

/// Scores the model at every outer step of the fixed rollout drawn from
/// `rng`. The rollout depends only on the episode, the simulation settings
/// and the rng, so models evaluated with equal seeds see identical paths and
/// observations.
pub fn eval_goal_episode<S: Real, R: Rng>(
    store: &ParamStore<S>,
    model: &Model,
    inst: &Instance,
    cfg: &Config,
    radius: f64,
    rng: &mut R,
) -> Result<Vec<GoalStepResult>> {
    let ep = &inst.episode;
    let mut tape = Tape::inference();
    let roll = goal_rollout(&mut tape, store, model, inst, cfg, cfg.outer_steps, false, rng)?;
    let goal = ep.goal_pose();
    let start = ep.start_pose();
    let err = |p: (f64, f64)| libm::hypot(p.0 - goal.x, p.1 - goal.y);
    let mut out = Vec::with_capacity(roll.maps.len());
    for map in &roll.maps {
        let geom = &map.geometry;
        let (p, mass_error) = predicted_goal(&mut tape, store, model, inst, map)?;
        let h = handcoded_goal(&map.observed, geom, (start.x, start.y), radius, cfg.handcoded_sigma)?;
        out.push(GoalStepResult {
            area: map.observed_area(),
            goal_seen: geom.flat(goal.x, goal.y).is_some_and(|i| map.observed[i]),
            error: err(p),
            handcoded_error: err(h),
            mass_error,
        });
    }
    Ok(out)
}

/// Mean start-goal distance over a corpus.
pub fn mean_goal_distance(episodes: &[&Episode]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Invalid("empty corpus".into()));
    }
    Ok(episodes.iter().map(|e| e.start_goal_distance()).sum::<f64>() / episodes.len() as f64)
}
