#![allow(dead_code)]

pub mod gradcheck;

use aim_core::envkit::{EnvConfig, Episode, EpisodeBatch};
use aim_core::trainer::{rollout_episode, Ablations, Learner, RolloutOptions, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A model small enough for exhaustive finite differences.
pub fn tiny_config(seed: u64, ablation: Ablations) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = seed;
    c.env = EnvConfig {
        grid_size: 4,
        n_agents: 3,
        n_prey: 1,
        sight_radius: 1,
        horizon: 3,
        ..EnvConfig::default()
    };
    c.network.hidden = 4;
    c.network.latent = 2;
    c.network.attention_dim = 3;
    c.network.mixer_embed = 3;
    c.network.hyper_hidden = 4;
    c.k = 2;
    c.batch_size = 2;
    c.buffer_capacity = 4;
    c.ablation = ablation;
    c
}

pub fn episodes<T: aim_core::diffcore::Real>(learner: &Learner<T>, n: u64, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = RolloutOptions {
        epsilon: 0.7,
        ..RolloutOptions::greedy()
    };
    (0..n)
        .map(|s| {
            rollout_episode(&learner.model, &learner.params, &learner.config.env, seed * 100 + s, opts, &mut rng)
                .unwrap()
                .0
        })
        .collect()
}

pub fn batch_of(eps: &[Episode]) -> EpisodeBatch {
    let refs: Vec<&Episode> = eps.iter().collect();
    EpisodeBatch::collate(&refs).unwrap()
}
