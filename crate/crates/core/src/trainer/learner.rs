use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::RunConfig;
use super::model::{AimModel, ModelSpec};
use super::replay::ReplayBuffer;
use crate::diffcore::{clip_global_norm, real, Graph, Optimizer, ParamSet, Real};
use crate::envkit::EpisodeBatch;
use crate::error::{ensure, Result};

/// Loss values from one gradient step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TrainStats {
    pub total: f64,
    pub td: f64,
    pub mi: f64,
    pub cn: f64,
    pub ce: f64,
    pub sy: f64,
    pub se: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// Fraction of valid teammate actions whose argmax prediction was right.
    pub ce_accuracy: f64,
}

/// Online network, target copy, optimizer state and the sampling stream.
pub struct Learner<T: Real> {
    pub config: RunConfig,
    pub model: AimModel,
    pub params: ParamSet<T>,
    pub target: ParamSet<T>,
    optimizer: Optimizer<T>,
    rng: ChaCha8Rng,
    train_steps: u64,
}

impl<T: Real> Learner<T> {
    /// Builds the networks from `config.seed`.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let model = AimModel::new(ModelSpec::from_config(&config), &mut params, &mut init)?;
        Ok(Self::from_parts(config, model, params))
    }

    pub fn from_parts(config: RunConfig, model: AimModel, params: ParamSet<T>) -> Self {
        let optimizer = Optimizer::new(config.optimizer, config.lr, &params);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_1ea7);
        Learner {
            target: params.clone(),
            model,
            params,
            optimizer,
            rng,
            train_steps: 0,
            config,
        }
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// One gradient step on a sampled batch; `None` while the buffer holds
    /// fewer than `batch_size` episodes.
    pub fn train_step(&mut self, buffer: &ReplayBuffer) -> Result<Option<TrainStats>> {
        let episodes = match buffer.sample(self.config.batch_size, &mut self.rng) {
            Some(e) => e,
            None => return Ok(None),
        };
        let batch = EpisodeBatch::collate(&episodes)?;
        self.train_on(&batch).map(Some)
    }

    /// One gradient step on a given batch.
    pub fn train_on(&mut self, batch: &EpisodeBatch) -> Result<TrainStats> {
        ensure!(batch.max_len > 0, Contract, "training batch has no transitions");
        let target_next = self.model.target_next_values(&self.target, batch)?;
        let (stats, mut grads) = {
            let mut g = Graph::new();
            let bind = g.bind(&self.params);
            let un = self.model.unroll(&mut g, &bind, batch, batch.max_len, Some(&mut self.rng))?;
            let l = self.model.losses(&mut g, &bind, batch, &un, &target_next, self.config.gamma, &self.config.lambdas)?;
            let f = |v| g.scalar_value(v).to_f64().unwrap_or(f64::NAN);
            let mut stats = TrainStats {
                total: f(l.total),
                td: f(l.td),
                mi: f(l.mi),
                cn: f(l.cn),
                ce: f(l.ce),
                sy: f(l.sy),
                se: f(l.se),
                grad_norm: 0.0,
                ce_accuracy: if l.ce_count > 0 { l.ce_correct as f64 / l.ce_count as f64 } else { f64::NAN },
            };
            ensure!(stats.total.is_finite(), Numeric, "non-finite loss at train step {}", self.train_steps);
            let grads = g.backward(l.total)?.for_binding(&g, &bind);
            stats.grad_norm = 0.0;
            (stats, grads)
        };
        let norm = clip_global_norm(&mut grads, real(self.config.grad_clip));
        let stats = TrainStats {
            grad_norm: norm.to_f64().unwrap_or(f64::NAN),
            ..stats
        };
        self.optimizer.step(&mut self.params, &grads)?;
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.config.target_sync_interval) {
            self.target.copy_from(&self.params)?;
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::EnvConfig;
    use crate::trainer::rollout::{rollout_episode, RolloutOptions};

    fn config() -> RunConfig {
        let mut c = RunConfig::default();
        c.env = EnvConfig {
            grid_size: 4,
            n_agents: 3,
            n_prey: 1,
            horizon: 5,
            ..EnvConfig::default()
        };
        c.network.hidden = 8;
        c.network.latent = 4;
        c.network.attention_dim = 4;
        c.network.mixer_embed = 4;
        c.network.hyper_hidden = 8;
        c.batch_size = 4;
        c.buffer_capacity = 16;
        c.target_sync_interval = 3;
        c
    }

    fn filled(learner: &Learner<f32>, n: u64) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(learner.config.buffer_capacity).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let opts = RolloutOptions {
            epsilon: 0.5,
            ..RolloutOptions::greedy()
        };
        for s in 0..n {
            let (ep, _) = rollout_episode(&learner.model, &learner.params, &learner.config.env, s, opts, &mut rng).unwrap();
            buf.push(ep);
        }
        buf
    }

    #[test]
    fn waits_for_a_full_batch() {
        let mut l = Learner::<f32>::new(config()).unwrap();
        let buf = filled(&l, 3);
        assert!(l.train_step(&buf).unwrap().is_none());
        assert_eq!(l.train_steps(), 0);
    }

    #[test]
    fn training_is_deterministic_and_syncs_target() {
        let run = || {
            let mut l = Learner::<f32>::new(config()).unwrap();
            let buf = filled(&l, 6);
            let stats: Vec<TrainStats> = (0..4).map(|_| l.train_step(&buf).unwrap().unwrap()).collect();
            (stats, l)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.total.is_finite() && s.grad_norm > 0.0));
        // Synced at step 3, then one more update.
        let diff = |x: &ParamSet<f32>, y: &ParamSet<f32>| x.iter().zip(y.iter()).any(|(p, q)| p.value() != q.value());
        assert!(diff(&la.params, &la.target));
        assert!(!diff(&la.params, &lb.params));
    }

    #[test]
    fn target_matches_params_right_after_sync() {
        let mut l = Learner::<f32>::new(config()).unwrap();
        let buf = filled(&l, 6);
        for _ in 0..3 {
            l.train_step(&buf).unwrap();
        }
        assert!(l.params.iter().zip(l.target.iter()).all(|(p, q)| p.value() == q.value()));
    }
}
