//! Goal prediction tables and navigation metrics over corpus splits.

use std::fmt::Write as _;

use anyhow::{ensure, Result};
use beliefnav_core::agent::{Instance, Model};
use beliefnav_core::config::{BeliefSource, Config};
use beliefnav_core::eval::{eval_goal_episode, navigate, random_walk, GoalStepResult, VlnMetrics, VlnOutcome};
use beliefnav_core::rng::{derive, mix};

use crate::checkpoint::Checkpoint;
use crate::dataset::check_world_settings;

const GOAL_LABEL: u64 = 0x676f_616c;
const VLN_LABEL: u64 = 0x766c_6e00;
const WALK_LABEL: u64 = 0x7761_6c6b;

/// Fixed rollout seed of evaluation episode `index`.
pub fn episode_seed(seed: u64, label: u64, index: usize) -> u64 {
    mix(mix(seed, label), index as u64)
}

/// Per-step means of one goal prediction method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSteps {
    pub label: String,
    pub error: Vec<f64>,
    pub success: Vec<f64>,
}

impl MethodSteps {
    pub fn mean_success(&self) -> f64 {
        self.success.iter().sum::<f64>() / self.success.len() as f64
    }

    pub fn mean_error(&self) -> f64 {
        self.error.iter().sum::<f64>() / self.error.len() as f64
    }
}

/// Goal prediction results by outer step, with the hand-coded baseline last.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalTable {
    pub episodes: usize,
    pub success_m: f64,
    /// Mean observed area in m².
    pub area: Vec<f64>,
    pub goal_seen: Vec<f64>,
    pub methods: Vec<MethodSteps>,
    /// Largest filter mass error seen.
    pub mass_error: f64,
}

impl GoalTable {
    pub fn method(&self, label: &str) -> Option<&MethodSteps> {
        self.methods.iter().find(|m| m.label == label)
    }

    /// One row per outer step plus an `avg` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,map_seen_m2,goal_seen");
        for m in &self.methods {
            write!(s, ",{0}_error_m,{0}_success", m.label).unwrap();
        }
        s.push('\n');
        let steps = self.area.len();
        for k in 0..steps {
            write!(s, "{k},{:.4},{:.4}", self.area[k], self.goal_seen[k]).unwrap();
            for m in &self.methods {
                write!(s, ",{:.4},{:.4}", m.error[k], m.success[k]).unwrap();
            }
            s.push('\n');
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        write!(s, "avg,{:.4},{:.4}", avg(&self.area), avg(&self.goal_seen)).unwrap();
        for m in &self.methods {
            write!(s, ",{:.4},{:.4}", m.mean_error(), m.mean_success()).unwrap();
        }
        writeln!(s, "\n# success threshold {} m over {} episodes", self.success_m, self.episodes).unwrap();
        s
    }
}

/// Scores each checkpoint, and the hand-coded ring of `radius` meters, on
/// the same fixed rollouts. Checkpoints must agree on every setting that
/// shapes the rollouts.
pub fn goal_table(checkpoints: &[&Checkpoint], episodes: &[Instance], radius: f64, seed: u64) -> Result<GoalTable> {
    ensure!(!checkpoints.is_empty() && !episodes.is_empty(), "nothing to evaluate");
    let cfg0 = &checkpoints[0].config;
    for c in checkpoints {
        check_world_settings(cfg0, &c.config)?;
        for key in ["outer_steps", "p_toward_goal", "pano_scans", "pano_columns", "pano_fov_deg", "p_miss", "map_size", "success_m", "handcoded_sigma"] {
            let get = |cfg: &Config| cfg.entries().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v);
            ensure!(get(cfg0) == get(&c.config), "checkpoints disagree on `{key}`");
        }
    }
    let steps = cfg0.outer_steps;
    let n = episodes.len() as f64;
    let thr = cfg0.success_m;
    let mut area = vec![0.0; steps];
    let mut seen = vec![0.0; steps];
    let mut hand = MethodSteps {
        label: "handcoded".into(),
        error: vec![0.0; steps],
        success: vec![0.0; steps],
    };
    let mut methods = Vec::new();
    let mut mass: f64 = 0.0;
    for (ci, c) in checkpoints.iter().enumerate() {
        let mut m = MethodSteps {
            label: c.label(),
            error: vec![0.0; steps],
            success: vec![0.0; steps],
        };
        for (i, inst) in episodes.iter().enumerate() {
            let mut rng = derive(episode_seed(seed, GOAL_LABEL, i), 0);
            let rows: Vec<GoalStepResult> = eval_goal_episode(&c.store, &c.model, inst, &c.config, radius, &mut rng)?;
            for (k, r) in rows.iter().enumerate() {
                m.error[k] += r.error / n;
                m.success[k] += f64::from(u8::from(r.error < thr)) / n;
                mass = mass.max(r.mass_error);
                if ci == 0 {
                    area[k] += r.area / n;
                    seen[k] += f64::from(u8::from(r.goal_seen)) / n;
                    hand.error[k] += r.handcoded_error / n;
                    hand.success[k] += f64::from(u8::from(r.handcoded_error < thr)) / n;
                }
            }
        }
        methods.push(m);
    }
    methods.push(hand);
    Ok(GoalTable {
        episodes: episodes.len(),
        success_m: thr,
        area,
        goal_seen: seen,
        methods,
        mass_error: mass,
    })
}

/// Greedy navigation metrics of a filter checkpoint, and the largest belief
/// mass error seen.
pub fn vln_metrics(ck: &Checkpoint, episodes: &[Instance], source: BeliefSource, seed: u64) -> Result<(VlnMetrics, f64)> {
    let Model::Filter(agent) = &ck.model else {
        anyhow::bail!("navigation needs a filter checkpoint");
    };
    let mut outs = Vec::with_capacity(episodes.len());
    let mut mass: f64 = 0.0;
    for (i, inst) in episodes.iter().enumerate() {
        let mut rng = derive(episode_seed(seed, VLN_LABEL, i), 0);
        let (o, m) = navigate(&ck.store, agent, inst, &ck.config, source, &mut rng)?;
        outs.push(o);
        mass = mass.max(m);
    }
    Ok((VlnMetrics::aggregate(&outs, ck.config.success_m)?, mass))
}

/// Navigation metrics of the random-walk agent.
pub fn random_walk_metrics(cfg: &Config, episodes: &[Instance], seed: u64) -> Result<VlnMetrics> {
    let outs: Vec<VlnOutcome> = episodes
        .iter()
        .enumerate()
        .map(|(i, inst)| random_walk(&inst.episode, cfg, &mut derive(episode_seed(seed, WALK_LABEL, i), 0)))
        .collect::<beliefnav_core::Result<_>>()?;
    Ok(VlnMetrics::aggregate(&outs, cfg.success_m)?)
}

pub const VLN_HEADER: &str = "agent,split,episodes,tl_m,ne_m,os,sr,spl,success_m";

/// One `VLN_HEADER` row.
pub fn vln_row(agent: &str, split: &str, m: &VlnMetrics, success_m: f64) -> String {
    format!(
        "{agent},{split},{},{:.4},{:.4},{:.4},{:.4},{:.4},{success_m}",
        m.episodes, m.tl, m.ne, m.os, m.sr, m.spl
    )
}
