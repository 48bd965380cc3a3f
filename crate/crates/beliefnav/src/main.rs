use std::fs;
use std::path::PathBuf;

use anyhow::{ensure, Context, Result};
use beliefnav::checkpoint::Checkpoint;
use beliefnav::dataset::{check_world_settings, Dataset, Split};
use beliefnav::dump::dump_artifacts;
use beliefnav::evaluate::{goal_table, random_walk_metrics, vln_metrics, vln_row, VLN_HEADER};
use beliefnav::load_config;
use beliefnav::train::train;
use beliefnav_core::config::BeliefSource;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "beliefnav", about = "Instruction following with a learned histogram Bayes filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Settings file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed (the corpus seed for gen-data).
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the episode corpus.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write its metric log and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Corpus directory.
        #[arg(long)]
        data: PathBuf,
    },
    /// Goal prediction by outer step for each checkpoint and the hand-coded baseline.
    EvalGoal {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Repeat to compare several models on identical rollouts.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, default_value = "val-unseen")]
        split: Split,
    },
    /// Greedy navigation metrics, with the random-walk reference.
    EvalVln {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val-unseen")]
        split: Split,
        /// Feed the policy the demonstrator trajectory instead of filter beliefs.
        #[arg(long)]
        oracle: bool,
    },
    /// Write belief, map and attention artifacts for one episode.
    Dump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val-unseen")]
        split: Split,
        #[arg(long, default_value_t = 0)]
        episode: usize,
    },
}

fn corpus_for(ck: &Checkpoint, dir: &PathBuf) -> Result<Dataset> {
    let data = Dataset::load(dir, &ck.config)?;
    check_world_settings(&data.config, &ck.config).context("checkpoint does not match the corpus")?;
    Ok(data)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData { common } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.data_seed = s;
            }
            let data = Dataset::generate(&cfg)?;
            data.save(&common.out)?;
            println!(
                "{} train, {} val-seen, {} val-unseen episodes; mean start-goal distance {:.3} m",
                data.train.len(),
                data.val_seen.len(),
                data.val_unseen.len(),
                data.mean_goal_distance()?
            );
        }
        Command::Train { common, data } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let corpus = Dataset::load(&data, &cfg)?;
            let report = train(&cfg, &corpus, Some(&common.out), true)?;
            println!(
                "best iteration {} of {} in {:.1} s; files in {}",
                report.best_iteration,
                cfg.iterations,
                report.seconds,
                common.out.display()
            );
        }
        Command::EvalGoal {
            common,
            data,
            checkpoint,
            split,
        } => {
            let cks = checkpoint.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
            let corpus = corpus_for(&cks[0], &data)?;
            let refs: Vec<&Checkpoint> = cks.iter().collect();
            let seed = common.seed.unwrap_or(cks[0].config.seed);
            let table = goal_table(&refs, corpus.split(split), corpus.mean_goal_distance()?, seed)?;
            let csv = table.to_csv();
            fs::write(&common.out, &csv)?;
            print!("{csv}");
        }
        Command::EvalVln {
            common,
            data,
            checkpoint,
            split,
            oracle,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let corpus = corpus_for(&ck, &data)?;
            let seed = common.seed.unwrap_or(ck.config.seed);
            let eps = corpus.split(split);
            let source = if oracle { BeliefSource::Oracle } else { BeliefSource::Filter };
            let (m, _) = vln_metrics(&ck, eps, source, seed)?;
            let walk = random_walk_metrics(&ck.config, eps, seed)?;
            ensure!(m.consistent() && walk.consistent(), "metric ordering violated");
            let name = split.to_string();
            let agent = if oracle { "oracle-belief" } else { "agent" };
            let csv = format!(
                "{VLN_HEADER}\n{}\n{}\n",
                vln_row(agent, &name, &m, ck.config.success_m),
                vln_row("random-walk", &name, &walk, ck.config.success_m)
            );
            fs::write(&common.out, &csv)?;
            print!("{csv}");
        }
        Command::Dump {
            common,
            data,
            checkpoint,
            split,
            episode,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let corpus = corpus_for(&ck, &data)?;
            let inst = corpus.split(split).get(episode).context("episode index out of range")?;
            let files = dump_artifacts(&ck, inst, common.seed.unwrap_or(ck.config.seed), &common.out)?;
            println!("wrote {} files to {}", files.len(), common.out.display());
        }
    }
    Ok(())
}
