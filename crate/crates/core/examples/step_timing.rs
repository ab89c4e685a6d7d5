//! Times rollouts and gradient steps at the default scale.
use std::time::Instant;

use aim_core::trainer::{rollout_episode, Learner, ReplayBuffer, RolloutOptions, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> aim_core::Result<()> {
    let config = RunConfig::default();
    let mut learner = Learner::<f32>::new(config.clone())?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let opts = RolloutOptions { epsilon: 0.5, ..RolloutOptions::greedy() };
    let t = Instant::now();
    for s in 0..config.batch_size as u64 {
        let (ep, _) = rollout_episode(&learner.model, &learner.params, &config.env, s, opts, &mut rng)?;
        buffer.push(ep);
    }
    println!("rollout: {:.1} ms/episode", t.elapsed().as_secs_f64() * 1e3 / config.batch_size as f64);
    let t = Instant::now();
    for _ in 0..5 {
        learner.train_step(&buffer)?;
    }
    println!("train: {:.1} ms/step", t.elapsed().as_secs_f64() * 1e3 / 5.0);
    Ok(())
}
