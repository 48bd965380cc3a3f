//! Training loop with periodic validation and best-checkpoint selection.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use beliefnav_core::agent::Instance;
use beliefnav_core::config::{Config, Regime};
use beliefnav_core::rng::{derive, mix};
use beliefnav_core::trainer::Trainer;
use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::evaluate::{goal_table, vln_metrics};

const ORDER_LABEL: u64 = 0x6f72_6472;
const VAL_LABEL: u64 = 0x7661_6c00;

pub const LOG_HEADER: &str = "iteration,regime,train_loss,val_episodes,goal_success,goal_error_m,sr,spl,os,mass_error,success_m";

/// One validation row of the metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub regime: Regime,
    /// Mean training loss since the previous row.
    pub train_loss: f64,
    pub val_episodes: usize,
    pub goal_success: Option<f64>,
    pub goal_error: Option<f64>,
    pub sr: Option<f64>,
    pub spl: Option<f64>,
    pub os: Option<f64>,
    pub mass_error: f64,
    pub success_m: f64,
}

impl LogRow {
    /// Model selection score: goal success or SPL.
    pub fn score(&self) -> f64 {
        self.goal_success.or(self.spl).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{:.6},{},{},{},{},{},{},{:.3e},{}",
            self.iteration,
            self.regime,
            self.train_loss,
            self.val_episodes,
            opt(self.goal_success),
            opt(self.goal_error),
            opt(self.sr),
            opt(self.spl),
            opt(self.os),
            self.mass_error,
            self.success_m
        )
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    pub best_iteration: usize,
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub seconds: f64,
}

impl TrainReport {
    /// The metric log: header and one line per validation.
    pub fn log_text(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }
}

/// Validates `ck` on the first `cfg.val_episodes` episodes of `episodes`.
pub fn validate(ck: &Checkpoint, episodes: &[Instance], radius: f64, iteration: usize, train_loss: f64) -> Result<LogRow> {
    let cfg = &ck.config;
    let val = &episodes[..cfg.val_episodes.min(episodes.len())];
    let seed = mix(cfg.seed, VAL_LABEL);
    let mut row = LogRow {
        iteration,
        regime: cfg.regime,
        train_loss,
        val_episodes: val.len(),
        goal_success: None,
        goal_error: None,
        sr: None,
        spl: None,
        os: None,
        mass_error: 0.0,
        success_m: cfg.success_m,
    };
    match cfg.regime {
        Regime::Goal => {
            let t = goal_table(&[ck], val, radius, seed)?;
            row.goal_success = Some(t.methods[0].mean_success());
            row.goal_error = Some(t.methods[0].mean_error());
            row.mass_error = t.mass_error;
        }
        Regime::Vln => {
            let (m, mass) = vln_metrics(ck, val, cfg.belief_source, seed)?;
            row.sr = Some(m.sr);
            row.spl = Some(m.spl);
            row.os = Some(m.os);
            row.mass_error = mass;
        }
    }
    Ok(row)
}

/// Trains a fresh model under `cfg`. With `out` set, writes `metrics.csv`
/// (appended at every validation), `wall.csv`, `best.ckpt` and `last.ckpt`
/// there. Validation uses the seen split; the best row by goal success or SPL
/// selects the kept checkpoint.
pub fn train(cfg: &Config, data: &Dataset, out: Option<&Path>, progress: bool) -> Result<TrainReport> {
    anyhow::ensure!(!data.train.is_empty(), "training split is empty");
    let start = Instant::now();
    let radius = data.mean_goal_distance()?;
    let mut ck = Checkpoint::init(cfg, data.vocab.len())?;
    let mut trainer = Trainer::new(&ck.store, cfg);
    let mut order_rng = derive(cfg.seed, ORDER_LABEL);
    let mut order: Vec<usize> = Vec::new();
    let mut files = match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let mut log = fs::File::create(dir.join("metrics.csv"))?;
            writeln!(log, "{LOG_HEADER}")?;
            let mut wall = fs::File::create(dir.join("wall.csv"))?;
            writeln!(wall, "iteration,wall_s")?;
            Some((log, wall))
        }
        None => None,
    };
    let mut rows = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    for it in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..data.train.len()).collect();
                order.shuffle(&mut order_rng);
            }
            batch.push(&data.train[order.pop().expect("refilled")]);
        }
        let loss = trainer
            .step(&mut ck.store, &ck.model, &batch)
            .with_context(|| format!("training aborted at iteration {it}"))?;
        loss_sum += loss;
        loss_n += 1;
        let due = (cfg.val_every > 0 && it % cfg.val_every == 0) || it == cfg.iterations;
        if !due {
            continue;
        }
        let row = validate(&ck, &data.val_seen, radius, it, loss_sum / loss_n as f64)?;
        (loss_sum, loss_n) = (0.0, 0);
        if let Some((log, wall)) = files.as_mut() {
            writeln!(log, "{}", row.to_csv())?;
            writeln!(wall, "{it},{:.3}", start.elapsed().as_secs_f64())?;
        }
        if progress {
            eprintln!("[{:>7.1}s] {}", start.elapsed().as_secs_f64(), row.to_csv());
        }
        if best.as_ref().is_none_or(|b| row.score() > b.0) {
            best = Some((row.score(), it, ck.clone()));
        }
        rows.push(row);
    }
    let (_, best_iteration, best) = best.unwrap_or((0.0, 0, ck.clone()));
    if let Some(dir) = out {
        best.save(&dir.join("best.ckpt"))?;
        ck.save(&dir.join("last.ckpt"))?;
    }
    Ok(TrainReport {
        rows,
        best_iteration,
        best,
        last: ck,
        seconds: start.elapsed().as_secs_f64(),
    })
}
