use rand::{Rng, RngCore};
use serde::Serialize;

use super::actor::{ActorStep, Team};
use super::model::AimModel;
use crate::agent_mixer::greedy_actions;
use crate::diffcore::{ParamSet, Real};
use crate::envkit::{Env, EnvConfig, Episode};
use crate::error::Result;

/// Per-step filter output of every agent, kept when requested.
#[derive(Clone, Debug, Default, Serialize)]
pub struct FilterTrace {
    /// `[t][i]` → row `i` of the evaluation matrix at step `t`.
    pub c_rows: Vec<Vec<Vec<f64>>>,
    /// `[t][i]` → teammates selected by agent `i`.
    pub selected: Vec<Vec<Vec<usize>>>,
}

#[derive(Clone, Copy, Debug)]
pub struct RolloutOptions {
    pub epsilon: f64,
    /// Sample beliefs (and stochastic top-k, if configured) while acting.
    pub stochastic: bool,
    pub trace: bool,
}

impl RolloutOptions {
    pub fn greedy() -> Self {
        RolloutOptions {
            epsilon: 0.0,
            stochastic: false,
            trace: false,
        }
    }
}

/// Plays one episode with per-agent epsilon-greedy actions. The environment
/// draws from `env_seed`; exploration and belief noise draw from `rng`.
pub fn rollout_episode<T: Real, R: RngCore + ?Sized>(
    model: &AimModel,
    params: &ParamSet<T>,
    env_config: &EnvConfig,
    env_seed: u64,
    options: RolloutOptions,
    rng: &mut R,
) -> Result<(Episode, Option<FilterTrace>)> {
    let mut env = Env::new(env_config.clone(), env_seed)?;
    let mut episode = Episode::start(&env);
    let mut team = Team::<T>::new(model);
    let mut trace = options.trace.then(FilterTrace::default);
    let n = env_config.n_agents;
    let n_actions = env_config.n_actions();
    // A fully random policy never reads the network.
    let needs_net = options.epsilon < 1.0 || trace.is_some();

    while !env.is_terminal() {
        let frames = episode.frames.last().expect("initial frame");
        let greedy = if needs_net {
            let steps = if options.stochastic {
                team.act(model, params, frames, Some(&mut *rng))?
            } else {
                team.act(model, params, frames, None::<&mut R>)?
            };
            if let Some(tr) = trace.as_mut() {
                record(tr, &steps);
            }
            let q = ndarray::Array2::from_shape_fn((n, n_actions), |(i, a)| steps[i].q[a]);
            greedy_actions(&q)
        } else {
            vec![0; n]
        };
        let actions: Vec<usize> = greedy
            .into_iter()
            .map(|g| {
                if rng.random_bool(options.epsilon) {
                    rng.random_range(0..n_actions)
                } else {
                    g
                }
            })
            .collect();
        let out = env.step(&actions)?;
        team.record_actions(&actions);
        episode.push(&env, actions, out.reward);
    }
    Ok((episode, trace))
}

fn record<T: Real>(trace: &mut FilterTrace, steps: &[ActorStep<T>]) {
    trace.c_rows.push(
        steps
            .iter()
            .map(|s| {
                s.c_row
                    .as_ref()
                    .map(|r| r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
                    .unwrap_or_default()
            })
            .collect(),
    );
    trace.selected.push(steps.iter().map(|s| s.selected.clone()).collect());
}
