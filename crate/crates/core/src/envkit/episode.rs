use std::io::Write;

use serde::Serialize;

use super::observation::ObservationFrame;
use super::world::Env;
use crate::error::{ensure, Result};

/// One recorded episode. Per-step arrays have length `len()`; frames and
/// states also hold the observation after the final step.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub frames: Vec<Vec<ObservationFrame>>,
    pub states: Vec<Vec<f32>>,
    pub state_hashes: Vec<u64>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f32>,
    pub terminal: Vec<bool>,
    pub prey_captured: usize,
    pub prey_total: usize,
}

#[derive(Serialize)]
struct LogLine<'a> {
    t: usize,
    state_hash: String,
    joint_action: &'a [usize],
    reward: f32,
}

impl Episode {
    /// An empty record holding `env`'s current observations and state.
    pub fn start(env: &Env) -> Self {
        let state = env.state();
        let config = env.config();
        Episode {
            frames: vec![env.observations()],
            states: vec![state.features(config)],
            state_hashes: vec![state.state_hash()],
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: Vec::new(),
            prey_captured: 0,
            prey_total: config.n_prey,
        }
    }

    /// Appends one transition; `env` must already have stepped on `actions`.
    pub fn push(&mut self, env: &Env, actions: Vec<usize>, reward: f64) {
        let state = env.state();
        let config = env.config();
        self.frames.push(env.observations());
        self.states.push(state.features(config));
        self.state_hashes.push(state.state_hash());
        self.actions.push(actions);
        self.rewards.push(reward as f32);
        self.terminal.push(env.is_terminal());
        self.prey_captured = config.n_prey - state.prey_alive(config);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.frames[0].len()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().map(|&r| f64::from(r)).sum()
    }

    /// Fraction of prey captured; zero for tasks without prey.
    pub fn capture_rate(&self) -> f64 {
        if self.prey_total == 0 {
            0.0
        } else {
            self.prey_captured as f64 / self.prey_total as f64
        }
    }

    /// Line-delimited JSON, one timestep per line: state hash (hex), joint
    /// action, team reward.
    pub fn write_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in 0..self.len() {
            let line = LogLine {
                t,
                state_hash: format!("{:016x}", self.state_hashes[t]),
                joint_action: &self.actions[t],
                reward: self.rewards[t],
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Time-major, padded collation of several episodes.
///
/// Index layout: frames are `[(t * batch + b) * n_agents + i]` for
/// `t ∈ 0..=max_len`; actions likewise for `t ∈ 0..max_len`; per-team arrays
/// are `[t * batch + b]`.
#[derive(Clone, Debug)]
pub struct EpisodeBatch {
    pub batch_size: usize,
    pub n_agents: usize,
    pub max_len: usize,
    pub state_dim: usize,
    pub frames: Vec<ObservationFrame>,
    pub states: Vec<f32>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f32>,
    pub terminal: Vec<bool>,
    pub mask: Vec<f32>,
}

impl EpisodeBatch {
    pub fn collate(episodes: &[&Episode]) -> Result<Self> {
        ensure!(!episodes.is_empty(), Contract, "collate: no episodes");
        let n_agents = episodes[0].n_agents();
        let state_dim = episodes[0].states[0].len();
        ensure!(
            episodes.iter().all(|e| e.n_agents() == n_agents && e.states[0].len() == state_dim),
            Contract,
            "collate: episodes disagree on agent count or state size"
        );
        let batch_size = episodes.len();
        let max_len = episodes.iter().map(|e| e.len()).max().unwrap_or(0);

        let mut frames = Vec::with_capacity((max_len + 1) * batch_size * n_agents);
        let mut states = Vec::with_capacity((max_len + 1) * batch_size * state_dim);
        for t in 0..=max_len {
            for e in episodes {
                // Past the end, repeat the final observation; the mask hides it.
                let te = t.min(e.len());
                frames.extend(e.frames[te].iter().cloned());
                states.extend_from_slice(&e.states[te]);
            }
        }
        let mut actions = Vec::with_capacity(max_len * batch_size * n_agents);
        let mut rewards = Vec::with_capacity(max_len * batch_size);
        let mut terminal = Vec::with_capacity(max_len * batch_size);
        let mut mask = Vec::with_capacity(max_len * batch_size);
        for t in 0..max_len {
            for e in episodes {
                if t < e.len() {
                    actions.extend_from_slice(&e.actions[t]);
                    rewards.push(e.rewards[t]);
                    terminal.push(e.terminal[t]);
                    mask.push(1.0);
                } else {
                    actions.extend(std::iter::repeat_n(0, n_agents));
                    rewards.push(0.0);
                    terminal.push(true);
                    mask.push(0.0);
                }
            }
        }
        Ok(EpisodeBatch {
            batch_size,
            n_agents,
            max_len,
            state_dim,
            frames,
            states,
            actions,
            rewards,
            terminal,
            mask,
        })
    }

    pub fn frame(&self, t: usize, b: usize, i: usize) -> &ObservationFrame {
        &self.frames[(t * self.batch_size + b) * self.n_agents + i]
    }

    /// All agents' frames at `(t, b)`.
    pub fn frames_at(&self, t: usize, b: usize) -> &[ObservationFrame] {
        let start = (t * self.batch_size + b) * self.n_agents;
        &self.frames[start..start + self.n_agents]
    }

    pub fn state(&self, t: usize, b: usize) -> &[f32] {
        let start = (t * self.batch_size + b) * self.state_dim;
        &self.states[start..start + self.state_dim]
    }

    pub fn action(&self, t: usize, b: usize, i: usize) -> usize {
        self.actions[(t * self.batch_size + b) * self.n_agents + i]
    }

    pub fn reward(&self, t: usize, b: usize) -> f32 {
        self.rewards[t * self.batch_size + b]
    }

    pub fn is_terminal(&self, t: usize, b: usize) -> bool {
        self.terminal[t * self.batch_size + b]
    }

    pub fn mask(&self, t: usize, b: usize) -> f32 {
        self.mask[t * self.batch_size + b]
    }

    pub fn valid_steps(&self) -> usize {
        self.mask.iter().filter(|&&m| m > 0.0).count()
    }
}
