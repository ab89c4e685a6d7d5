use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use aim_core::trainer::{
    evaluate, load_run, plot_runs, rollout_episode, run_seed_battery, Ablations, ExperimentOptions, RolloutOptions,
    RunConfig, EVAL_SEED_BASE,
};

// glibc malloc fragments badly under the train loop's allocation pattern
// (RSS grows without bound while live bytes stay flat).
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "aim", version, about = "Teammate-modeling value decomposition on grid Dec-POMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Runs one seed after another, e.g. `0,1,2,3,4`. Takes precedence over --seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Comma-separated switches: no_belief, no_action, no_filter,
        /// belief_from_teammate_perspective. Added to the config's flags.
        #[arg(long)]
        ablate: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Write every evaluation step's C matrix and selections as JSON lines.
        #[arg(long)]
        dump_eval_matrices: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Greedy evaluation of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        /// Also write the first episode's step log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Plot mean ± std across seeds as SVG.
    Plot {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value = "capture_rate")]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            seed,
            seeds,
            ablate,
            k,
            out,
            dump_eval_matrices,
            quiet,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(list) = ablate {
                let extra = Ablations::parse_list(&list)?;
                let a = &mut cfg.ablation;
                a.no_belief |= extra.no_belief;
                a.no_action |= extra.no_action;
                a.no_filter |= extra.no_filter;
                a.belief_from_teammate_perspective |= extra.belief_from_teammate_perspective;
            }
            if let Some(k) = k {
                cfg.k = k;
            }
            cfg.validate()?;
            let seeds = if !seeds.is_empty() {
                seeds
            } else {
                vec![seed.unwrap_or(cfg.seed)]
            };
            let opts = ExperimentOptions {
                dump_eval_matrices,
                verbose: !quiet,
            };
            for o in run_seed_battery(&cfg, &seeds, &out, opts)? {
                println!("{}", serde_json::to_string(&o.summary)?);
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            log,
        } => {
            let learner = load_run(&checkpoint)?;
            let report = evaluate(&learner, episodes, 0.0, None)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(path) = log {
                let mut rng = rand_free_rng();
                let (ep, _) = rollout_episode(
                    &learner.model,
                    &learner.params,
                    &learner.config.env,
                    EVAL_SEED_BASE,
                    RolloutOptions::greedy(),
                    &mut rng,
                )?;
                let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                ep.write_log(BufWriter::new(f))?;
            }
        }
        Command::Plot { runs, metric, out } => {
            let series = plot_runs(&runs, &metric, &out)?;
            for s in series {
                eprintln!("{}: {} seeds, {} points", s.label, s.seeds, s.x.len());
            }
        }
    }
    Ok(())
}

/// Greedy actions do not depend on the generator; any fixed one will do.
fn rand_free_rng() -> impl rand::RngCore {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(0)
}
