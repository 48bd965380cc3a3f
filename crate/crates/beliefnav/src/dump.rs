//! Artifact export: belief and map graymaps, attention grids and a manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use beliefnav_core::agent::{Instance, Model};
use beliefnav_core::rng::derive;
use beliefnav_core::tensor::Tape;
use beliefnav_core::trainer::goal_rollout;

use crate::checkpoint::Checkpoint;

const DUMP_LABEL: u64 = 0x6475_6d70;

/// Binary 16-bit graymap of `panels` square `[n, n]` images side by side.
/// Values are scaled so the overall maximum is 65535; row 0 is the largest
/// `y`. Non-positive maxima give a black image.
pub fn pgm(values: &[f64], panels: usize, n: usize) -> Vec<u8> {
    assert_eq!(values.len(), panels * n * n, "graymap size");
    let max = values.iter().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    let mut out = format!("P5\n{} {}\n65535\n", panels * n, n).into_bytes();
    for row in 0..n {
        let cy = n - 1 - row;
        for p in 0..panels {
            for cx in 0..n {
                let v = values[p * n * n + cy * n + cx].max(0.0);
                let q = (v * scale).round().min(65535.0) as u16;
                out.extend_from_slice(&q.to_be_bytes());
            }
        }
    }
    out
}

/// Parses a graymap written by [`pgm`] into `(width, height, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let text_end = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(2)
        .map(|(i, _)| i + 1)
        .context("graymap header")?;
    let header = std::str::from_utf8(&bytes[..text_end])?;
    let f: Vec<&str> = header.split_whitespace().collect();
    ensure!(f.len() == 4 && f[0] == "P5" && f[3] == "65535", "unsupported graymap");
    let (w, h): (usize, usize) = (f[1].parse()?, f[2].parse()?);
    let px: Vec<u16> = bytes[text_end..].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    ensure!(px.len() == w * h, "graymap data length");
    Ok((w, h, px))
}

/// Attention weights as a grid with one row per step and one column per
/// token.
pub fn attention_csv(tokens: &[String], rows: &[Vec<f64>]) -> String {
    let mut s = String::from("step");
    for t in tokens {
        write!(s, ",{t}").unwrap();
    }
    s.push('\n');
    for (i, r) in rows.iter().enumerate() {
        write!(s, "{}", i + 1).unwrap();
        for v in r {
            write!(s, ",{v:.9}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Runs the fixed goal rollout of `inst` and writes graymaps of every
/// filter belief on the final map, each map channel, the observed mask, both
/// attention grids and `manifest.txt` into `dir`. Returns the written file
/// names in order.
pub fn dump_artifacts(ck: &Checkpoint, inst: &Instance, seed: u64, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let cfg = &ck.config;
    let mut tape = Tape::<f32>::inference();
    let mut rng = derive(seed, DUMP_LABEL);
    let roll = goal_rollout(&mut tape, &ck.store, &ck.model, inst, cfg, cfg.outer_steps, false, &mut rng)?;
    let map = roll.maps.last().expect("outer_steps is positive");
    let n = map.geometry.size;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let data = |tape: &Tape<f32>, v| tape.data(v).iter().map(|x| *x as f64).collect::<Vec<f64>>();
    match &ck.model {
        Model::Filter(agent) => {
            let run = agent.run_filter(&mut tape, &ck.store, inst, map)?;
            let h = agent.filter.headings;
            files.push(("belief_00.pgm".into(), pgm(&data(&tape, run.prior), h, n)));
            for (t, &b) in run.beliefs.iter().enumerate() {
                files.push((format!("belief_{:02}.pgm", t + 1), pgm(&data(&tape, b), h, n)));
            }
            let words = &inst.episode.tokens;
            files.push(("attention_obs.csv".into(), attention_csv(words, &run.attention_obs).into_bytes()));
            files.push(("attention_act.csv".into(), attention_csv(words, &run.attention_act).into_bytes()));
        }
        Model::Lingunet(net) => {
            let out = net.forward(&mut tape, &ck.store, &inst.tokens, map)?;
            files.push(("goal.pgm".into(), pgm(&data(&tape, out.goal), 1, n)));
            files.push(("visitation.pgm".into(), pgm(&data(&tape, out.visitation), 1, n)));
        }
    }
    let feats = data(&tape, map.features);
    for c in 0..cfg.map_channels {
        let ch = &feats[c * n * n..(c + 1) * n * n];
        let lo = ch.iter().zip(&map.observed).filter(|(_, &o)| o).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
        let shifted: Vec<f64> = ch.iter().zip(&map.observed).map(|(v, &o)| if o { v - lo + 1e-6 } else { 0.0 }).collect();
        files.push((format!("map_{c:02}.pgm"), pgm(&shifted, 1, n)));
    }
    let mask: Vec<f64> = map.observed.iter().map(|&o| f64::from(u8::from(o))).collect();
    files.push(("observed.pgm".into(), pgm(&mask, 1, n)));

    let mut manifest = String::new();
    writeln!(manifest, "model = {}", ck.label()).unwrap();
    writeln!(manifest, "seed = {seed}").unwrap();
    writeln!(manifest, "episode_seed = {}", inst.episode.seed).unwrap();
    writeln!(manifest, "instruction = {}", inst.episode.text).unwrap();
    writeln!(manifest, "outer_steps = {}", cfg.outer_steps).unwrap();
    writeln!(manifest, "map_seen_m2 = {:.4}", map.observed_area()).unwrap();
    writeln!(manifest, "graymaps: 16-bit, north up, heading panels left to right").unwrap();
    for (name, bytes) in &files {
        writeln!(manifest, "file {name} {}", bytes.len()).unwrap();
    }
    files.push(("manifest.txt".into(), manifest.into_bytes()));
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes).with_context(|| format!("writing {name}"))?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}
