use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action_portrait::ModelLambdas;
use crate::agent_mixer::MixerKind;
use crate::diffcore::OptimizerConfig;
use crate::dual_filter::FilterLambdas;
use crate::envkit::EnvConfig;
use crate::error::{ensure, Error, Result};

/// Module switches. With all three `no_*` flags set the model is a plain
/// recurrent QMIX learner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    /// Drop belief portraits: no latent, no MI/continuity losses, fusion
    /// attends over perception encodings instead.
    pub no_belief: bool,
    /// Drop the action-prediction loss.
    pub no_action: bool,
    /// Drop the dual filter: no evaluation matrix, no fusion, Q from `h_i` only.
    pub no_filter: bool,
    /// Encode beliefs from the perception encoding `ĥ_ij` instead of `h_i`.
    pub belief_from_teammate_perspective: bool,
}

impl Ablations {
    /// Parses a comma-separated list such as `no_belief,no_filter`.
    pub fn parse_list(list: &str) -> Result<Self> {
        let mut a = Ablations::default();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "no_belief" => a.no_belief = true,
                "no_action" => a.no_action = true,
                "no_filter" => a.no_filter = true,
                "belief_from_teammate_perspective" => a.belief_from_teammate_perspective = true,
                other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
            }
        }
        Ok(a)
    }

    pub fn all() -> Self {
        Ablations {
            no_belief: true,
            no_action: true,
            no_filter: true,
            belief_from_teammate_perspective: false,
        }
    }

    /// Short label used in file names and plot legends.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_belief {
            parts.push("no_belief");
        }
        if self.no_action {
            parts.push("no_action");
        }
        if self.no_filter {
            parts.push("no_filter");
        }
        if self.belief_from_teammate_perspective {
            parts.push("teammate_perspective");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Width of both GRUs and every MLP hidden layer.
    pub hidden: usize,
    pub latent: usize,
    pub attention_dim: usize,
    pub mixer: MixerKind,
    pub mixer_embed: usize,
    pub hyper_hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: 64,
            latent: crate::belief::LATENT_DIM,
            attention_dim: 32,
            mixer: MixerKind::Qmix,
            mixer_embed: 32,
            hyper_hidden: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lambdas {
    pub mi: f64,
    pub cn: f64,
    pub ce: f64,
    pub sy: f64,
    pub se: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        let m = ModelLambdas::default();
        let f = FilterLambdas::default();
        Lambdas {
            mi: m.mi,
            cn: m.cn,
            ce: m.ce,
            sy: f.sy,
            se: f.se,
        }
    }
}

impl Lambdas {
    pub fn model(&self) -> ModelLambdas {
        ModelLambdas {
            mi: self.mi,
            cn: self.cn,
            ce: self.ce,
        }
    }

    pub fn filter(&self) -> FilterLambdas {
        FilterLambdas { sy: self.sy, se: self.se }
    }
}

/// Linear epsilon annealing over environment steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            anneal_steps: 50_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, env_steps: u64) -> f64 {
        if env_steps >= self.anneal_steps {
            return self.end;
        }
        let frac = (env_steps as f64 / self.anneal_steps as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Everything a training run needs. Loaded from TOML; unknown keys are
/// rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub total_env_steps: u64,
    pub gamma: f64,
    pub lr: f64,
    pub grad_clip: f64,
    /// Replay capacity in episodes.
    pub buffer_capacity: usize,
    /// Episodes per gradient step.
    pub batch_size: usize,
    /// Gradient steps between target-network copies.
    pub target_sync_interval: u64,
    pub k: usize,
    /// Sample teammates proportionally to their scores instead of taking the
    /// top k.
    pub stochastic_topk: bool,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub env: EnvConfig,
    pub network: NetworkConfig,
    pub lambdas: Lambdas,
    pub epsilon: EpsilonSchedule,
    pub ablation: Ablations,
    pub optimizer: OptimizerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            total_env_steps: 50_000,
            gamma: 0.99,
            lr: 5e-4,
            grad_clip: 10.0,
            buffer_capacity: 2000,
            batch_size: 32,
            target_sync_interval: 200,
            k: 2,
            stochastic_topk: false,
            eval_interval: 5_000,
            eval_episodes: 20,
            env: EnvConfig::default(),
            network: NetworkConfig::default(),
            lambdas: Lambdas::default(),
            epsilon: EpsilonSchedule::default(),
            ablation: Ablations::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        ensure!((0.0..1.0).contains(&self.gamma), Config, "gamma must lie in [0, 1), got {}", self.gamma);
        ensure!(self.lr > 0.0, Config, "learning rate must be positive");
        ensure!(self.grad_clip > 0.0, Config, "gradient clip must be positive");
        ensure!(self.buffer_capacity > 0, Config, "buffer capacity must be positive");
        ensure!(self.batch_size > 0, Config, "batch size must be positive");
        ensure!(self.batch_size <= self.buffer_capacity, Config, "batch size exceeds buffer capacity");
        ensure!(self.target_sync_interval > 0, Config, "target sync interval must be positive");
        ensure!(self.eval_interval > 0, Config, "eval interval must be positive");
        ensure!(
            self.k >= 1 && self.k < self.env.n_agents,
            Config,
            "k = {} must satisfy 1 ≤ k ≤ N−1 = {}",
            self.k,
            self.env.n_agents - 1
        );
        let e = &self.epsilon;
        ensure!(
            (0.0..=1.0).contains(&e.start) && (0.0..=1.0).contains(&e.end),
            Config,
            "epsilon must lie in [0, 1]"
        );
        let n = &self.network;
        ensure!(
            n.hidden > 0 && n.latent > 0 && n.attention_dim > 0 && n.mixer_embed > 0 && n.hyper_hidden > 0,
            Config,
            "network sizes must be positive"
        );
        let l = &self.lambdas;
        ensure!(
            [l.mi, l.cn, l.ce, l.sy, l.se].iter().all(|x| x.is_finite() && *x >= 0.0),
            Config,
            "lambdas must be finite and non-negative"
        );
        Ok(())
    }
}
