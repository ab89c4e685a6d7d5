//! The training loop, evaluation, and everything it writes to disk.
//!
//! Per seed `S`, a run directory receives:
//! - `metrics_seed{S}.csv`: one [`MetricsRow`] per evaluation
//! - `timing_seed{S}.csv`: wall-clock seconds per evaluation row
//! - `checkpoint_seed{S}.bin` and `config_seed{S}.toml`
//! - `summary_seed{S}.json`
//! - `eval_matrices_seed{S}.jsonl` when requested
//!
//! Wall-clock lives in its own file so that the metrics file is a pure
//! function of config and seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::learner::{Learner, TrainStats};
use super::replay::ReplayBuffer;
use super::rollout::{rollout_episode, FilterTrace, RolloutOptions};
use crate::diffcore::ParamSet;
use crate::error::{Error, Result};

/// Column names of the metrics file, in order.
pub const METRICS_HEADER: [&str; 18] = [
    "env_steps",
    "episodes",
    "train_steps",
    "epsilon",
    "return_mean",
    "return_std",
    "capture_rate",
    "loss_total",
    "loss_td",
    "loss_mi",
    "loss_cn",
    "loss_ce",
    "loss_sy",
    "loss_se",
    "ce_accuracy",
    "c_diag_mean",
    "c_offdiag_mean",
    "c_sym",
];

/// Environment seeds of evaluation episodes are shared by every run, so
/// runs are compared on the same start states.
pub const EVAL_SEED_BASE: u64 = 1 << 40;

/// One evaluation. Loss columns average the train steps since the previous
/// row (`NaN` if there were none); `c_*` columns come from the greedy
/// evaluation episodes (`NaN` without a filter).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub episodes: u64,
    pub train_steps: u64,
    pub epsilon: f64,
    pub return_mean: f64,
    pub return_std: f64,
    pub capture_rate: f64,
    pub loss_total: f64,
    pub loss_td: f64,
    pub loss_mi: f64,
    pub loss_cn: f64,
    pub loss_ce: f64,
    pub loss_sy: f64,
    pub loss_se: f64,
    pub ce_accuracy: f64,
    pub c_diag_mean: f64,
    pub c_offdiag_mean: f64,
    /// Symmetry loss of the evaluation matrix assembled from all agents' rows.
    pub c_sym: f64,
}

impl MetricsRow {
    /// Value of a column by header name.
    pub fn get(&self, column: &str) -> Option<f64> {
        Some(match column {
            "env_steps" => self.env_steps as f64,
            "episodes" => self.episodes as f64,
            "train_steps" => self.train_steps as f64,
            "epsilon" => self.epsilon,
            "return_mean" => self.return_mean,
            "return_std" => self.return_std,
            "capture_rate" => self.capture_rate,
            "loss_total" => self.loss_total,
            "loss_td" => self.loss_td,
            "loss_mi" => self.loss_mi,
            "loss_cn" => self.loss_cn,
            "loss_ce" => self.loss_ce,
            "loss_sy" => self.loss_sy,
            "loss_se" => self.loss_se,
            "ce_accuracy" => self.ce_accuracy,
            "c_diag_mean" => self.c_diag_mean,
            "c_offdiag_mean" => self.c_offdiag_mean,
            "c_sym" => self.c_sym,
            _ => return None,
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Config(format!("{}: unexpected metrics header", path.display())));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Greedy evaluation summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub return_mean: f64,
    pub return_std: f64,
    pub capture_rate: f64,
    pub c_diag_mean: f64,
    pub c_offdiag_mean: f64,
    pub c_sym: f64,
}

#[derive(Serialize)]
struct MatrixLine<'a> {
    env_steps: u64,
    episode: usize,
    t: usize,
    c: &'a [Vec<f64>],
    selected: &'a [Vec<usize>],
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Plays `episodes` evaluation episodes with the given epsilon. Belief
/// sampling is off; the evaluation matrix statistics come from the actors'
/// own rows. `dump` receives every step's matrix and selections.
pub fn evaluate(
    learner: &Learner<f32>,
    episodes: usize,
    epsilon: f64,
    mut dump: Option<(&mut dyn Write, u64)>,
) -> Result<EvalReport> {
    let opts = RolloutOptions {
        epsilon,
        stochastic: false,
        trace: learner.model.scorer().is_some(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(EVAL_SEED_BASE);
    let mut returns = Vec::with_capacity(episodes);
    let mut captures = Vec::with_capacity(episodes);
    let (mut diag, mut off, mut sym) = (Vec::new(), Vec::new(), Vec::new());
    for m in 0..episodes {
        let (ep, trace) = rollout_episode(
            &learner.model,
            &learner.params,
            &learner.config.env,
            EVAL_SEED_BASE + m as u64,
            opts,
            &mut rng,
        )?;
        returns.push(ep.episode_return());
        captures.push(ep.capture_rate());
        if let Some(FilterTrace { c_rows, selected }) = trace {
            for (t, c) in c_rows.iter().enumerate() {
                let n = c.len();
                let mut asym = 0.0;
                for i in 0..n {
                    diag.push(c[i][i]);
                    for j in 0..n {
                        if i != j {
                            off.push(c[i][j]);
                            asym += (c[i][j] - c[j][i]).powi(2);
                        }
                    }
                }
                sym.push(asym.sqrt());
                if let Some((w, steps)) = dump.as_mut() {
                    let line = MatrixLine {
                        env_steps: *steps,
                        episode: m,
                        t,
                        c,
                        selected: &selected[t],
                    };
                    serde_json::to_writer(&mut **w, &line).map_err(|e| Error::io("writing eval matrices", e.into()))?;
                    writeln!(w).map_err(|e| Error::io("writing eval matrices", e))?;
                }
            }
        }
    }
    let (return_mean, return_std) = mean_std(&returns);
    Ok(EvalReport {
        return_mean,
        return_std,
        capture_rate: mean_std(&captures).0,
        c_diag_mean: mean_std(&diag).0,
        c_offdiag_mean: mean_std(&off).0,
        c_sym: mean_std(&sym).0,
    })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ExperimentOptions {
    pub dump_eval_matrices: bool,
    /// Print one line per evaluation to stderr.
    pub verbose: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub ablation: String,
    pub k: usize,
    pub env_steps: u64,
    pub episodes: u64,
    pub train_steps: u64,
    pub wall_seconds: f64,
    /// Capture rate of the uniformly random policy on the evaluation seeds.
    pub random_capture_rate: f64,
    pub random_return_mean: f64,
    pub final_capture_rate: f64,
    pub final_return_mean: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_seed{seed}.csv"))
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint_seed{seed}.bin"))
}

pub fn config_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("config_seed{seed}.toml"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

#[derive(Default)]
struct StatsAccumulator {
    n: usize,
    sum: [f64; 8],
}

impl StatsAccumulator {
    fn add(&mut self, s: &TrainStats) {
        let v = [s.total, s.td, s.mi, s.cn, s.ce, s.sy, s.se, s.ce_accuracy];
        self.n += 1;
        for (a, b) in self.sum.iter_mut().zip(v) {
            *a += b;
        }
    }

    fn take(&mut self) -> [f64; 8] {
        let out = if self.n == 0 {
            [f64::NAN; 8]
        } else {
            self.sum.map(|x| x / self.n as f64)
        };
        *self = StatsAccumulator::default();
        out
    }
}

/// Env seed of the `e`-th training episode of a run.
fn train_env_seed(run_seed: u64, e: u64) -> u64 {
    run_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(e)
}

/// Trains one seed to `config.total_env_steps`, evaluating greedily at step
/// 0, at every crossing of `eval_interval`, and at the end.
pub fn run_experiment(config: &RunConfig, out_dir: &Path, options: ExperimentOptions) -> Result<ExperimentOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let seed = config.seed;
    let started = Instant::now();
    let mut learner = Learner::<f32>::new(config.clone())?;

    std::fs::write(config_path(out_dir, seed), config.to_toml())
        .map_err(|e| Error::io("writing run config", e))?;
    let ckpt = checkpoint_path(out_dir, seed);
    learner.params.save(&ckpt)?;

    let mpath = metrics_path(out_dir, seed);
    let mut metrics = csv::WriterBuilder::new().has_headers(false).from_writer(create(&mpath)?);
    metrics.write_record(METRICS_HEADER)?;
    let mut timing = create(&out_dir.join(format!("timing_seed{seed}.csv")))?;
    writeln!(timing, "env_steps,wall_seconds").map_err(|e| Error::io("writing timing", e))?;
    let mut dump = if options.dump_eval_matrices {
        Some(create(&out_dir.join(format!("eval_matrices_seed{seed}.jsonl")))?)
    } else {
        None
    };

    let random = evaluate(&learner, config.eval_episodes, 1.0, None)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11c_e5ed);
    let mut acc = StatsAccumulator::default();
    let mut rows = Vec::new();
    let (mut env_steps, mut episodes) = (0u64, 0u64);
    let mut next_eval = 0u64;
    let mut last = EvalReport::default();

    let mut emit = |learner: &Learner<f32>,
                    acc: &mut StatsAccumulator,
                    env_steps: u64,
                    episodes: u64,
                    dump: &mut Option<BufWriter<File>>|
     -> Result<MetricsRow> {
        let ev = evaluate(
            learner,
            config.eval_episodes,
            0.0,
            dump.as_mut().map(|w| (w as &mut dyn Write, env_steps)),
        )?;
        let l = acc.take();
        let row = MetricsRow {
            env_steps,
            episodes,
            train_steps: learner.train_steps(),
            epsilon: config.epsilon.at(env_steps),
            return_mean: ev.return_mean,
            return_std: ev.return_std,
            capture_rate: ev.capture_rate,
            loss_total: l[0],
            loss_td: l[1],
            loss_mi: l[2],
            loss_cn: l[3],
            loss_ce: l[4],
            loss_sy: l[5],
            loss_se: l[6],
            ce_accuracy: l[7],
            c_diag_mean: ev.c_diag_mean,
            c_offdiag_mean: ev.c_offdiag_mean,
            c_sym: ev.c_sym,
        };
        metrics.serialize(&row)?;
        metrics.flush().map_err(|e| Error::io("writing metrics", e))?;
        writeln!(timing, "{env_steps},{:.3}", started.elapsed().as_secs_f64())
            .map_err(|e| Error::io("writing timing", e))?;
        if options.verbose {
            eprintln!(
                "seed {seed} steps {env_steps:>8} return {:>8.3} capture {:.3} loss {:.4}",
                row.return_mean, row.capture_rate, row.loss_total
            );
        }
        Ok(row)
    };

    if config.total_env_steps > 0 {
        let row = emit(&learner, &mut acc, 0, 0, &mut dump)?;
        rows.push(row);
        next_eval = config.eval_interval;
    }
    while env_steps < config.total_env_steps {
        let opts = RolloutOptions {
            epsilon: config.epsilon.at(env_steps),
            stochastic: false,
            trace: false,
        };
        let (ep, _) = rollout_episode(
            &learner.model,
            &learner.params,
            &config.env,
            train_env_seed(seed, episodes),
            opts,
            &mut rng,
        )?;
        env_steps += ep.len() as u64;
        episodes += 1;
        buffer.push(ep);
        if let Some(stats) = learner.train_step(&buffer)? {
            acc.add(&stats);
        }
        let at_end = env_steps >= config.total_env_steps;
        if env_steps >= next_eval || at_end {
            while next_eval <= env_steps {
                next_eval += config.eval_interval;
            }
            let row = emit(&learner, &mut acc, env_steps, episodes, &mut dump)?;
            last = EvalReport {
                return_mean: row.return_mean,
                capture_rate: row.capture_rate,
                ..EvalReport::default()
            };
            rows.push(row);
        }
    }
    metrics.flush().map_err(|e| Error::io("writing metrics", e))?;
    timing.flush().map_err(|e| Error::io("writing timing", e))?;
    if let Some(mut d) = dump {
        d.flush().map_err(|e| Error::io("writing eval matrices", e))?;
    }
    learner.params.save(&ckpt)?;

    let summary = RunSummary {
        seed,
        ablation: config.ablation.label(),
        k: config.k,
        env_steps,
        episodes,
        train_steps: learner.train_steps(),
        wall_seconds: started.elapsed().as_secs_f64(),
        random_capture_rate: random.capture_rate,
        random_return_mean: random.return_mean,
        final_capture_rate: if rows.is_empty() { f64::NAN } else { last.capture_rate },
        final_return_mean: if rows.is_empty() { f64::NAN } else { last.return_mean },
    };
    let spath = out_dir.join(format!("summary_seed{seed}.json"));
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&spath, text).map_err(|e| Error::io(format!("writing {}", spath.display()), e))?;
    Ok(ExperimentOutcome {
        metrics_path: mpath,
        checkpoint_path: ckpt,
        rows,
        summary,
    })
}

/// Runs the same config once per seed, serially, into one directory.
pub fn run_seed_battery(
    config: &RunConfig,
    seeds: &[u64],
    out_dir: &Path,
    options: ExperimentOptions,
) -> Result<Vec<ExperimentOutcome>> {
    seeds
        .iter()
        .map(|&s| {
            let mut c = config.clone();
            c.seed = s;
            run_experiment(&c, out_dir, options)
        })
        .collect()
}

/// Loads a checkpoint written by [`run_experiment`] together with the config
/// saved next to it.
pub fn load_run(checkpoint: &Path) -> Result<Learner<f32>> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let config_file = match stem.strip_prefix("checkpoint_") {
        Some(suffix) => dir.join(format!("config_{suffix}.toml")),
        None => dir.join("config.toml"),
    };
    let config = RunConfig::load(&config_file)?;
    let mut learner = Learner::<f32>::new(config)?;
    let params = ParamSet::<f32>::load(checkpoint)?;
    learner.params.copy_from(&params)?;
    learner.target.copy_from(&params)?;
    Ok(learner)
}
