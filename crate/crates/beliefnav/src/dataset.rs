//! Episode corpus: generation, splits and the on-disk index.
//!
//! Worlds and episodes are regenerated from their seeds, so a corpus on disk
//! is a settings file plus one row per episode. Loading checks every
//! regenerated instruction against the stored text.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use beliefnav_core::agent::Instance;
use beliefnav_core::config::Config;
use beliefnav_core::gridsim::{generate_world, grammar_words, sample_episode, Episode, NavGraph};
use beliefnav_core::langmodel::Vocabulary;
use beliefnav_core::rng::mix;

/// Settings shared by the corpus and every model trained or evaluated on it.
pub const WORLD_KEYS: &[&str] = &[
    "world_size",
    "cell_size",
    "t_max",
    "min_path_edges",
    "stop_landmark_radius",
    "clause_landmark_radius",
    "max_tokens",
];

/// Settings that only size and seed the corpus.
pub const CORPUS_KEYS: &[&str] = &[
    "data_seed",
    "train_worlds",
    "episodes_per_world",
    "val_seen_episodes",
    "val_unseen_worlds",
    "val_unseen_per_world",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    /// Held-out episodes in training worlds.
    ValSeen,
    /// Episodes in worlds never used for training.
    ValUnseen,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::ValSeen => "val-seen",
            Split::ValUnseen => "val-unseen",
        })
    }
}

impl FromStr for Split {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Split::Train,
            "val-seen" => Split::ValSeen,
            "val-unseen" => Split::ValUnseen,
            _ => bail!("unknown split `{s}` (train, val-seen, val-unseen)"),
        })
    }
}

/// Seeds of one corpus entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntrySeeds {
    pub split: Split,
    pub world: u64,
    pub episode: u64,
}

/// The three splits with their instructions encoded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: Config,
    pub vocab: Vocabulary,
    pub train: Vec<Instance>,
    pub val_seen: Vec<Instance>,
    pub val_unseen: Vec<Instance>,
    pub seeds: Vec<EntrySeeds>,
}

const WORLD_LABEL: u64 = 0x776f_726c;
const UNSEEN_LABEL: u64 = 0x756e_7365;

fn world_seed(cfg: &Config, index: usize, unseen: bool) -> u64 {
    let base = mix(cfg.data_seed, if unseen { UNSEEN_LABEL } else { WORLD_LABEL });
    mix(base, index as u64)
}

struct Builder<'a> {
    cfg: &'a Config,
    vocab: Vocabulary,
    world: Option<(u64, Arc<beliefnav_core::gridsim::World>, Arc<NavGraph>)>,
}

impl Builder<'_> {
    fn episode(&mut self, world_seed: u64, episode_seed: u64) -> Result<Instance> {
        if self.world.as_ref().map(|w| w.0) != Some(world_seed) {
            let w = Arc::new(generate_world(world_seed, self.cfg.world_size, self.cfg.cell_size)?);
            let g = Arc::new(NavGraph::build(&w));
            self.world = Some((world_seed, w, g));
        }
        let (_, w, g) = self.world.as_ref().expect("set above");
        let episode = sample_episode(w.clone(), g.clone(), episode_seed, self.cfg)?;
        let tokens = self.vocab.encode(&episode.text)?;
        Ok(Instance { episode, tokens })
    }
}

impl Dataset {
    /// Generates every split from `cfg.data_seed`.
    pub fn generate(cfg: &Config) -> Result<Self> {
        let mut seeds = Vec::new();
        for w in 0..cfg.train_worlds {
            let ws = world_seed(cfg, w, false);
            for e in 0..cfg.episodes_per_world {
                seeds.push(EntrySeeds {
                    split: Split::Train,
                    world: ws,
                    episode: mix(ws, e as u64),
                });
            }
        }
        ensure!(cfg.train_worlds > 0, "train_worlds must be positive");
        for i in 0..cfg.val_seen_episodes {
            let ws = world_seed(cfg, i % cfg.train_worlds, false);
            let e = cfg.episodes_per_world + i / cfg.train_worlds;
            seeds.push(EntrySeeds {
                split: Split::ValSeen,
                world: ws,
                episode: mix(ws, e as u64),
            });
        }
        for w in 0..cfg.val_unseen_worlds {
            let ws = world_seed(cfg, w, true);
            for e in 0..cfg.val_unseen_per_world {
                seeds.push(EntrySeeds {
                    split: Split::ValUnseen,
                    world: ws,
                    episode: mix(ws, e as u64),
                });
            }
        }
        Self::from_seeds(cfg, seeds, None)
    }

    fn from_seeds(cfg: &Config, seeds: Vec<EntrySeeds>, texts: Option<&[String]>) -> Result<Self> {
        let mut b = Builder {
            cfg,
            vocab: Vocabulary::build(grammar_words()),
            world: None,
        };
        let (mut train, mut val_seen, mut val_unseen) = (Vec::new(), Vec::new(), Vec::new());
        for (i, s) in seeds.iter().enumerate() {
            let inst = b
                .episode(s.world, s.episode)
                .with_context(|| format!("entry {i}: world {:#x}, episode {:#x}", s.world, s.episode))?;
            if let Some(t) = texts {
                ensure!(inst.episode.text == t[i], "entry {i}: regenerated instruction differs from the stored one");
            }
            match s.split {
                Split::Train => train.push(inst),
                Split::ValSeen => val_seen.push(inst),
                Split::ValUnseen => val_unseen.push(inst),
            }
        }
        Ok(Self {
            config: cfg.clone(),
            vocab: b.vocab,
            train,
            val_seen,
            val_unseen,
            seeds,
        })
    }

    pub fn split(&self, split: Split) -> &[Instance] {
        match split {
            Split::Train => &self.train,
            Split::ValSeen => &self.val_seen,
            Split::ValUnseen => &self.val_unseen,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val_seen.len() + self.val_unseen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean start-goal distance of the training split.
    pub fn mean_goal_distance(&self) -> Result<f64> {
        let eps: Vec<&Episode> = self.train.iter().map(|i| &i.episode).collect();
        Ok(beliefnav_core::eval::mean_goal_distance(&eps)?)
    }

    /// Writes `corpus.conf`, `episodes.csv` and `vocab.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("corpus.conf"), world_settings(&self.config))?;
        let mut csv = String::from("split,world_seed,episode_seed,edges,instruction\n");
        let mut next = [0usize; 3];
        for s in &self.seeds {
            let k = s.split as usize;
            let inst = &self.split(s.split)[next[k]];
            next[k] += 1;
            csv.push_str(&format!("{},{},{},{},{}\n", s.split, s.world, s.episode, inst.episode.edges(), inst.episode.text));
        }
        fs::write(dir.join("episodes.csv"), csv)?;
        fs::write(dir.join("vocab.txt"), self.vocab.to_lines())?;
        Ok(())
    }

    /// Reads a corpus written by [`Dataset::save`]. `cfg` supplies every
    /// setting outside the corpus file; its corpus settings must agree.
    pub fn load(dir: &Path, cfg: &Config) -> Result<Self> {
        let settings = fs::read_to_string(dir.join("corpus.conf")).with_context(|| format!("reading corpus in {}", dir.display()))?;
        let mut merged = cfg.clone();
        merged.apply_text(&settings)?;
        check_world_settings(&merged, cfg)?;
        let vocab_text = fs::read_to_string(dir.join("vocab.txt"))?;
        ensure!(
            Vocabulary::from_lines(&vocab_text)? == Vocabulary::build(grammar_words()),
            "vocabulary file does not match the instruction grammar"
        );
        let csv = fs::read_to_string(dir.join("episodes.csv"))?;
        let mut seeds = Vec::new();
        let mut texts = Vec::new();
        for (n, line) in csv.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.splitn(5, ',').collect();
            ensure!(f.len() == 5, "episodes.csv line {}: expected 5 fields", n + 1);
            seeds.push(EntrySeeds {
                split: f[0].parse()?,
                world: f[1].parse().with_context(|| format!("line {}", n + 1))?,
                episode: f[2].parse().with_context(|| format!("line {}", n + 1))?,
            });
            texts.push(f[4].to_string());
        }
        ensure!(!seeds.is_empty(), "corpus has no episodes");
        Self::from_seeds(&merged, seeds, Some(&texts))
    }
}

/// The corpus settings of `cfg` as `key = value` lines.
pub fn world_settings(cfg: &Config) -> String {
    cfg.entries()
        .into_iter()
        .filter(|(k, _)| WORLD_KEYS.contains(k) || CORPUS_KEYS.contains(k))
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

/// Rejects a pair of configs whose world settings differ.
pub fn check_world_settings(a: &Config, b: &Config) -> Result<()> {
    for ((k, va), (_, vb)) in a.entries().iter().zip(&b.entries()) {
        if WORLD_KEYS.contains(k) {
            ensure!(va == vb, "setting `{k}` is {va} in the corpus but {vb} here");
        }
    }
    Ok(())
}
