//! Rollouts, losses and optimisation steps for both training regimes.
//!
//! Goal regime: the agent follows a fixed trajectory that steps toward the
//! goal or along a random edge, the map is rebuilt along it and the goal
//! predictor is scored against the demonstrator trajectory. VLN regime: the
//! policy drives, mixed with the expert, and the filter and policy losses are
//! summed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::agent::{geometry, render, FilterAgent, Instance, Model};
pub use crate::config::BeliefSource;
use crate::config::{Config, Regime};
use crate::filter::heading_bin;
use crate::gridsim::{Episode, NavGraph, Pose, ViewpointId};
use crate::mapper::{MapGeometry, SemanticMap};
use crate::policy::{distribution, select_action, Candidate, Mode, Walk};
use crate::rng::{derive, mix};
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tape, Var};
use crate::{Error, Real, Result};

/// Normalized `[Θ, Y, X]` target: the heading bin of `pose` and a spatial
/// Gaussian of `sigma` cells around its cell (a delta when `sigma` is 0).
pub fn gaussian_target(geometry: &MapGeometry, headings: usize, pose: &Pose, sigma: f64) -> Result<Vec<f64>> {
    let (px, py) = geometry
        .cell_of(pose.x, pose.y)
        .ok_or_else(|| Error::Geometry(format!("target ({:.3}, {:.3}) outside the map", pose.x, pose.y)))?;
    let n = geometry.size;
    let mut t = vec![0.0; headings * n * n];
    let base = heading_bin(pose.theta, headings) * n * n;
    if sigma <= 0.0 {
        t[base + py * n + px] = 1.0;
        return Ok(t);
    }
    let mut total = 0.0;
    for cy in 0..n {
        for cx in 0..n {
            let (dx, dy) = (cx as f64 - px as f64, cy as f64 - py as f64);
            let d2 = dx * dx + dy * dy;
            let w = libm::exp(-d2 / (2.0 * sigma * sigma));
            t[base + cy * n + cx] = w;
            total += w;
        }
    }
    t.iter_mut().for_each(|v| *v /= total);
    Ok(t)
}

/// Demonstrator states `s*_1..s*_T`, padded with the goal state.
pub fn padded_trajectory(episode: &Episode, steps: usize) -> Vec<Pose> {
    let traj = episode.trajectory();
    let goal = *traj.last().expect("trajectories are nonempty");
    (1..=steps).map(|t| traj.get(t).copied().unwrap_or(goal)).collect()
}

/// One target per filter step.
pub fn trajectory_targets(episode: &Episode, geometry: &MapGeometry, headings: usize, steps: usize, sigma: f64) -> Result<Vec<Vec<f64>>> {
    padded_trajectory(episode, steps)
        .iter()
        .map(|p| gaussian_target(geometry, headings, p, sigma))
        .collect()
}

/// Mean path visitation target over `[Y, X]`: the average of the spatial
/// targets of `s*_0..s*_E`.
pub fn visitation_target(episode: &Episode, geometry: &MapGeometry, sigma: f64) -> Result<Vec<f64>> {
    let traj = episode.trajectory();
    let mut acc = vec![0.0; geometry.cells()];
    for p in &traj {
        for (a, v) in acc.iter_mut().zip(gaussian_target(geometry, 1, p, sigma)?) {
            *a += v / traj.len() as f64;
        }
    }
    Ok(acc)
}

/// Mean over steps of the histogram negative log-likelihood of each target.
pub fn filter_loss<S: Real>(tape: &mut Tape<S>, beliefs: &[Var], targets: &[Vec<f64>]) -> Result<Var> {
    if beliefs.is_empty() || beliefs.len() != targets.len() {
        return Err(Error::Invalid(format!("{} beliefs for {} targets", beliefs.len(), targets.len())));
    }
    let mut terms = Vec::with_capacity(beliefs.len());
    for (&b, t) in beliefs.iter().zip(targets) {
        let t: Vec<S> = t.iter().map(|&v| S::from_f64(v)).collect();
        terms.push(tape.nll_histogram(b, &t)?);
    }
    mean_of(tape, &terms)
}

/// Cross-entropy of the candidate `target` under the policy logits.
pub fn policy_loss<S: Real>(tape: &mut Tape<S>, logits: Var, candidates: &[Candidate], target: ViewpointId) -> Result<Var> {
    let i = candidates
        .iter()
        .position(|c| c.id == target)
        .ok_or(Error::TargetNotCandidate(target))?;
    tape.cross_entropy(logits, i)
}

fn mean_of<S: Real>(tape: &mut Tape<S>, terms: &[Var]) -> Result<Var> {
    let all = tape.concat(terms)?;
    Ok(tape.mean(all))
}

/// First viewpoint of the shortest route to `goal`, or `from` itself once
/// there.
pub fn expert_action(graph: &NavGraph, from: ViewpointId, goal: ViewpointId) -> Result<ViewpointId> {
    let route = graph.shortest_path(from, goal)?;
    Ok(route.get(1).copied().unwrap_or(from))
}

/// Viewpoints occupied at each outer step of a goal rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalPath {
    pub viewpoints: Vec<ViewpointId>,
    /// Whether each move followed the shortest route (one per move).
    pub toward: Vec<bool>,
}

/// Fixed trajectory of `steps` positions: each move goes toward the goal with
/// probability `p_toward` and along a uniformly random edge otherwise.
pub fn goal_path<R: Rng>(episode: &Episode, steps: usize, p_toward: f64, rng: &mut R) -> Result<GoalPath> {
    let g = &episode.graph;
    let mut viewpoints = vec![episode.start()];
    let mut toward = Vec::with_capacity(steps.saturating_sub(1));
    for _ in 1..steps {
        let cur = *viewpoints.last().expect("nonempty");
        let t = rng.gen_bool(p_toward);
        let next = if t {
            expert_action(g, cur, episode.goal())?
        } else {
            *g.adj[cur].choose(rng).ok_or(Error::UnknownViewpoint(cur))?
        };
        toward.push(t);
        viewpoints.push(next);
    }
    Ok(GoalPath { viewpoints, toward })
}

/// Agent poses and maps along a goal rollout; `maps[k]` holds every
/// panorama up to and including outer step `k`.
#[derive(Clone, Debug)]
pub struct GoalRollout {
    pub path: GoalPath,
    pub poses: Vec<Pose>,
    pub maps: Vec<SemanticMap>,
}

/// Draws the fixed trajectory of `cfg.outer_steps` positions, then renders
/// and maps the first `simulate` of them.
pub fn goal_rollout<S: Real, R: Rng>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    model: &Model,
    inst: &Instance,
    cfg: &Config,
    simulate: usize,
    dropout: bool,
    rng: &mut R,
) -> Result<GoalRollout> {
    let ep = &inst.episode;
    let path = goal_path(ep, cfg.outer_steps, cfg.p_toward_goal, rng)?;
    let mapper = model.mapper();
    let mask: Option<Vec<S>> = (dropout && cfg.map_dropout > 0.0).then(|| mapper.dropout_mask(cfg.map_dropout, rng));
    let mut map = SemanticMap::blank(tape, cfg.map_channels, geometry(ep, cfg))?;
    let mut pose = ep.start_pose();
    let mut poses = Vec::with_capacity(simulate);
    let mut maps = Vec::with_capacity(simulate);
    for (k, &v) in path.viewpoints.iter().take(simulate).enumerate() {
        if k > 0 {
            pose = ep.graph.step(&pose, v)?;
        }
        let pano = render(ep, &pose, cfg, rng)?;
        map = mapper.observe(tape, store, &map, &pano, mask.as_deref())?;
        poses.push(pose);
        maps.push(map.clone());
    }
    Ok(GoalRollout { path, poses, maps })
}

/// Goal regime loss of the model's prediction from one map.
pub fn goal_loss<S: Real>(tape: &mut Tape<S>, store: &ParamStore<S>, model: &Model, inst: &Instance, map: &SemanticMap, cfg: &Config) -> Result<Var> {
    let ep = &inst.episode;
    match model {
        Model::Filter(agent) => {
            let run = agent.run_filter(tape, store, inst, map)?;
            let targets = trajectory_targets(ep, &map.geometry, cfg.headings, cfg.t_max, cfg.target_sigma)?;
            filter_loss(tape, &run.beliefs, &targets)
        }
        Model::Lingunet(net) => {
            let out = net.forward(tape, store, &inst.tokens, map)?;
            let goal = gaussian_target(&map.geometry, 1, &ep.goal_pose(), cfg.target_sigma)?;
            let visit = visitation_target(ep, &map.geometry, cfg.target_sigma)?;
            let goal: Vec<S> = goal.iter().map(|&v| S::from_f64(v)).collect();
            let visit: Vec<S> = visit.iter().map(|&v| S::from_f64(v)).collect();
            let a = tape.nll_histogram(out.goal, &goal)?;
            let b = tape.nll_histogram(out.visitation, &visit)?;
            tape.add(a, b)
        }
    }
}

/// Outer steps scored in one goal regime episode, ascending.
pub fn loss_steps<R: Rng>(cfg: &Config, rng: &mut R) -> Vec<usize> {
    let n = cfg.outer_steps;
    if cfg.loss_outer_steps == 0 || cfg.loss_outer_steps >= n {
        return (0..n).collect();
    }
    let mut s = index::sample(rng, n, cfg.loss_outer_steps).into_vec();
    s.sort_unstable();
    s
}

/// Who picks each action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Driver {
    /// Policy sample with probability `p_policy`, expert action otherwise.
    Mixed { p_policy: f64 },
    Greedy,
}

/// One navigation episode.
#[derive(Clone, Debug)]
pub struct VlnRecord {
    pub walk: Walk,
    /// Whether each action came from the policy.
    pub from_policy: Vec<bool>,
    pub maps: Vec<SemanticMap>,
    /// Filter beliefs `b_1..b_T` at every outer step.
    pub beliefs: Vec<Vec<Var>>,
    pub filter_terms: Vec<Var>,
    pub policy_terms: Vec<Var>,
}

impl VlnRecord {
    /// `filter_weight · mean filter term + policy_weight · mean policy term`.
    pub fn loss<S: Real>(&self, tape: &mut Tape<S>, cfg: &Config) -> Result<Var> {
        let p = mean_of(tape, &self.policy_terms)?;
        let p = tape.scale(p, S::from_f64(cfg.policy_weight));
        if self.filter_terms.is_empty() {
            return Ok(p);
        }
        let f = mean_of(tape, &self.filter_terms)?;
        let f = tape.scale(f, S::from_f64(cfg.filter_weight));
        tape.add(f, p)
    }
}

/// Oracle belief constants for every filter step.
pub fn oracle_beliefs<S: Real>(tape: &mut Tape<S>, episode: &Episode, geometry: &MapGeometry, headings: usize, steps: usize) -> Result<Vec<Var>> {
    let n = geometry.size;
    trajectory_targets(episode, geometry, headings, steps, 0.0)?
        .into_iter()
        .map(|t| tape.constant(&[headings, n, n], t.into_iter().map(S::from_f64).collect()))
        .collect()
}

/// Runs the agent until it stops or reaches `2·T_max` actions. With `train`
/// set, one filter and one policy loss term are recorded per action.
#[allow(clippy::too_many_arguments)]
pub fn vln_rollout<S: Real, R: Rng>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    agent: &FilterAgent,
    inst: &Instance,
    cfg: &Config,
    source: BeliefSource,
    driver: Driver,
    train: bool,
    rng: &mut R,
) -> Result<VlnRecord> {
    let ep = &inst.episode;
    let g = &ep.graph;
    let geom = geometry(ep, cfg);
    let cap = 2 * cfg.t_max;
    let mask: Option<Vec<S>> = (train && cfg.map_dropout > 0.0).then(|| agent.mapper.dropout_mask(cfg.map_dropout, rng));
    let targets = match (train, source) {
        (true, BeliefSource::Filter) => trajectory_targets(ep, &geom, cfg.headings, cfg.t_max, cfg.target_sigma)?,
        _ => Vec::new(),
    };
    let mut rec = VlnRecord {
        walk: Walk::new(g, ep.start(), ep.start_heading)?,
        from_policy: Vec::new(),
        maps: Vec::new(),
        beliefs: Vec::new(),
        filter_terms: Vec::new(),
        policy_terms: Vec::new(),
    };
    let mut map = SemanticMap::blank(tape, cfg.map_channels, geom)?;
    while !rec.walk.stopped {
        let beliefs = match source {
            BeliefSource::Filter => {
                let pano = render(ep, &rec.walk.pose, cfg, rng)?;
                map = agent.mapper.observe(tape, store, &map, &pano, mask.as_deref())?;
                rec.maps.push(map.clone());
                agent.run_filter(tape, store, inst, &map)?.beliefs
            }
            BeliefSource::Oracle => oracle_beliefs(tape, ep, &geom, cfg.headings, cfg.t_max)?,
        };
        let cands = rec.walk.candidates(g);
        let feats = agent.policy.features(tape, &beliefs, &geom, g, &cands)?;
        let logits = agent.policy.logits(tape, store, feats)?;
        let expert = expert_action(g, rec.walk.current(), ep.goal())?;
        if train {
            if !targets.is_empty() {
                let f = filter_loss(tape, &beliefs, &targets)?;
                rec.filter_terms.push(f);
            }
            let p = policy_loss(tape, logits, &cands, expert)?;
            rec.policy_terms.push(p);
        }
        rec.beliefs.push(beliefs);
        let probs = distribution(tape.data(logits));
        let (choice, by_policy) = match driver {
            Driver::Greedy => (cands[select_action(&probs, Mode::Greedy, rng)?].id, true),
            Driver::Mixed { p_policy } => {
                if rng.gen_bool(p_policy) {
                    (cands[select_action(&probs, Mode::Sample, rng)?].id, true)
                } else {
                    (expert, false)
                }
            }
        };
        rec.from_policy.push(by_policy);
        rec.walk.take(g, choice)?;
        if !rec.walk.stopped && rec.walk.actions >= cap {
            rec.walk.force_stop();
        }
    }
    Ok(rec)
}

/// Differentiable loss of one training episode under `cfg.regime`.
pub fn episode_loss<S: Real, R: Rng>(tape: &mut Tape<S>, store: &ParamStore<S>, model: &Model, inst: &Instance, cfg: &Config, rng: &mut R) -> Result<Var> {
    match cfg.regime {
        Regime::Goal => {
            let steps = loss_steps(cfg, rng);
            let last = *steps.last().expect("outer_steps is positive");
            let roll = goal_rollout(tape, store, model, inst, cfg, last + 1, true, rng)?;
            let mut terms = Vec::with_capacity(steps.len());
            for &k in &steps {
                terms.push(goal_loss(tape, store, model, inst, &roll.maps[k], cfg)?);
            }
            mean_of(tape, &terms)
        }
        Regime::Vln => {
            let Model::Filter(agent) = model else {
                return Err(Error::Config("the vln regime needs the filter model".into()));
            };
            let rec = vln_rollout(
                tape,
                store,
                agent,
                inst,
                cfg,
                cfg.belief_source,
                Driver::Mixed { p_policy: cfg.p_policy },
                true,
                rng,
            )?;
            rec.loss(tape, cfg)
        }
    }
}

pub fn adam_config(cfg: &Config) -> AdamConfig {
    AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    }
}

/// Optimizer state and iteration counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: Config,
    pub adam: AdamState,
    /// Completed optimisation steps.
    pub iteration: usize,
}

impl Trainer {
    pub fn new<S: Real>(store: &ParamStore<S>, cfg: &Config) -> Self {
        Self {
            cfg: cfg.clone(),
            adam: AdamState::new(store, adam_config(cfg)),
            iteration: 0,
        }
    }

    /// Seed of the rollout for batch slot `slot` at the current iteration.
    pub fn rollout_seed(&self, slot: usize) -> u64 {
        mix(mix(self.cfg.seed, 0x7261_696e), (self.iteration * self.cfg.batch_size + slot) as u64)
    }

    /// Backpropagates the mean loss over `batch` and applies one Adam step.
    /// Returns the mean loss. A non-finite loss aborts before any update.
    pub fn step<S: Real>(&mut self, store: &mut ParamStore<S>, model: &Model, batch: &[&Instance]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        store.zero_grad();
        let mut total = 0.0;
        for (slot, inst) in batch.iter().enumerate() {
            let mut rng = derive(self.rollout_seed(slot), 0);
            let mut tape = Tape::new();
            let loss = episode_loss(&mut tape, store, model, inst, &self.cfg, &mut rng).map_err(|e| match e {
                Error::DegenerateUpdate(m) if !m.is_finite() => Error::NonFiniteLoss(self.iteration),
                other => other,
            })?;
            let v = tape.data(loss)[0].as_f64();
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss(self.iteration));
            }
            total += v;
            let grads = tape.backward(loss)?;
            grads.accumulate_into(&tape, store);
        }
        store.scale_grads(S::from_f64(1.0 / batch.len() as f64));
        self.adam.step(store)?;
        self.iteration += 1;
        Ok(total / batch.len() as f64)
    }
}
