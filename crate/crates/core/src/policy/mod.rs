//! Reactive viewpoint policy over belief features.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::config::Config;
use crate::gridsim::{NavGraph, Pose, ViewpointId};
use crate::mapper::MapGeometry;
use crate::nn::Linear;
use crate::tensor::{ParamStore, Tape, Var};
use crate::{Error, Real, Result};

/// A viewpoint the agent may choose next.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub id: ViewpointId,
    /// Euclidean distance from the current pose in meters.
    pub distance: f64,
    pub visited: bool,
}

/// Agent progress through one episode on the navigation graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Walk {
    /// Every viewpoint passed through, in order, starting with the start.
    pub path: Vec<ViewpointId>,
    /// Visited flags by viewpoint id.
    pub visited: Vec<bool>,
    pub pose: Pose,
    pub length: f64,
    pub actions: usize,
    pub stopped: bool,
}

impl Walk {
    pub fn new(graph: &NavGraph, start: ViewpointId, heading: f64) -> Result<Self> {
        graph.check(start)?;
        let mut visited = vec![false; graph.len()];
        visited[start] = true;
        Ok(Self {
            path: vec![start],
            visited,
            pose: graph.pose(start, heading),
            length: 0.0,
            actions: 0,
            stopped: false,
        })
    }

    pub fn current(&self) -> ViewpointId {
        *self.path.last().expect("walks start with one viewpoint")
    }

    /// Visited viewpoints and their graph neighbors, sorted by id.
    pub fn candidates(&self, graph: &NavGraph) -> Vec<Candidate> {
        let mut is_cand = self.visited.clone();
        for (v, _) in self.visited.iter().enumerate().filter(|(_, &f)| f) {
            for &n in &graph.adj[v] {
                is_cand[n] = true;
            }
        }
        is_cand
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(id, _)| {
                let (x, y) = graph.pos[id];
                Candidate {
                    id,
                    distance: libm::hypot(x - self.pose.x, y - self.pose.y),
                    visited: self.visited[id],
                }
            })
            .collect()
    }

    /// Travels to `to` along the shortest route. Choosing a visited
    /// viewpoint ends the walk there.
    pub fn take(&mut self, graph: &NavGraph, to: ViewpointId) -> Result<()> {
        if self.stopped {
            return Err(Error::Invalid("walk already stopped".into()));
        }
        let stop = self.visited[to];
        let route = graph.shortest_path(self.current(), to)?;
        for w in route.windows(2) {
            self.pose = graph.step(&self.pose, w[1])?;
            self.length += graph.dist(w[0], w[1]);
            self.path.push(w[1]);
            self.visited[w[1]] = true;
        }
        self.actions += 1;
        self.stopped = stop;
        Ok(())
    }

    /// Ends the walk in place.
    pub fn force_stop(&mut self) {
        self.stopped = true;
    }
}

/// Normalized Gaussian weights of every map cell around `(x, y)`.
pub fn neighborhood_weights(geometry: &MapGeometry, x: f64, y: f64, sigma: f64) -> Vec<f64> {
    let n = geometry.size;
    let mut w = Vec::with_capacity(n * n);
    for cy in 0..n {
        for cx in 0..n {
            let (px, py) = geometry.center(cx, cy);
            let d2 = (px - x) * (px - x) + (py - y) * (py - y);
            w.push(libm::exp(-d2 / (2.0 * sigma * sigma)));
        }
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Greedy,
    Sample,
}

/// Two-layer perceptron scoring each candidate from `[b_1..b_T, distance, visited]`.
#[derive(Clone, Debug)]
pub struct Policy {
    pub l1: Linear,
    pub l2: Linear,
    pub steps: usize,
    pub sigma: f64,
}

impl Policy {
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, cfg: &Config, rng: &mut R) -> Result<Self> {
        let width = cfg.t_max + 2;
        Ok(Self {
            l1: Linear::new(store, "policy.l1", width, cfg.policy_hidden, true, rng)?,
            l2: Linear::new(store, "policy.l2", cfg.policy_hidden, 1, false, rng)?,
            steps: cfg.t_max,
            sigma: cfg.policy_sigma,
        })
    }

    /// Feature matrix `[T + 2, N]`, one column per candidate.
    pub fn features<S: Real>(
        &self,
        tape: &mut Tape<S>,
        beliefs: &[Var],
        geometry: &MapGeometry,
        graph: &NavGraph,
        candidates: &[Candidate],
    ) -> Result<Var> {
        if beliefs.len() != self.steps || candidates.is_empty() {
            return Err(Error::Invalid(format!(
                "policy needs {} beliefs and a candidate, got {} and {}",
                self.steps,
                beliefs.len(),
                candidates.len()
            )));
        }
        let cells = geometry.cells();
        let n = candidates.len();
        let mut rows = Vec::with_capacity(beliefs.len());
        for &b in beliefs {
            let m = tape.max_axis0(b)?;
            rows.push(tape.reshape(m, &[cells])?);
        }
        let stacked = tape.concat(&rows)?;
        let stacked = tape.reshape(stacked, &[self.steps, cells])?;
        let mut w = vec![S::zero(); cells * n];
        for (j, c) in candidates.iter().enumerate() {
            let (x, y) = graph.pos[c.id];
            for (i, v) in neighborhood_weights(geometry, x, y, self.sigma).into_iter().enumerate() {
                w[i * n + j] = S::from_f64(v);
            }
        }
        let w = tape.constant(&[cells, n], w)?;
        let belief = tape.matmul(stacked, w)?;
        let mut travel = Vec::with_capacity(2 * n);
        travel.extend(candidates.iter().map(|c| S::from_f64(c.distance)));
        travel.extend(candidates.iter().map(|c| if c.visited { S::one() } else { S::zero() }));
        let travel = tape.constant(&[2, n], travel)?;
        tape.concat(&[belief, travel])
    }

    /// One logit per candidate.
    pub fn logits<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, features: Var) -> Result<Var> {
        let n = tape.shape(features)[1];
        let h = self.l1.forward_cols(tape, store, features)?;
        let h = tape.relu(h);
        let y = self.l2.forward_cols(tape, store, h)?;
        tape.reshape(y, &[n])
    }
}

/// Softmax of a logit slice.
pub fn distribution<S: Real>(logits: &[S]) -> Vec<f64> {
    let m = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| libm::exp(v.as_f64() - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Chosen candidate index. Greedy ties go to the smallest index.
pub fn select_action<R: Rng>(probs: &[f64], mode: Mode, rng: &mut R) -> Result<usize> {
    match mode {
        Mode::Greedy => {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            if probs.is_empty() {
                return Err(Error::Invalid("empty action distribution".into()));
            }
            Ok(best)
        }
        Mode::Sample => {
            let d = WeightedIndex::new(probs).map_err(|e| Error::Invalid(format!("action distribution: {e}")))?;
            Ok(d.sample(rng))
        }
    }
}
