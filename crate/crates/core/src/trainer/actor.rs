//! Decentralized execution: one agent, its own observations, nothing else.

use ndarray::Array2;
use rand::RngCore;

use super::model::{pair_offset, pair_teammate, write_agent_input, AimModel};
use crate::belief::{sample_latent, standard_noise};
use crate::diffcore::{Graph, ParamSet, Real};
use crate::envkit::ObservationFrame;
use crate::error::{ensure, Result};
use crate::perception::row_portraits;

/// What one agent computed at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorStep<T> {
    pub q: Vec<T>,
    /// This agent's row of the evaluation matrix.
    pub c_row: Option<Vec<T>>,
    pub selected: Vec<usize>,
    /// Attention weights over `selected`.
    pub attention: Option<Vec<T>>,
}

/// Recurrent state of a single agent. Everything `act` reads is either this
/// state or the agent's own observation.
#[derive(Clone, Debug)]
pub struct AgentActor<T> {
    agent: usize,
    h: Array2<T>,
    h_hat: Array2<T>,
    last_action: Option<usize>,
}

impl<T: Real> AgentActor<T> {
    pub fn new(model: &AimModel, agent: usize) -> Self {
        let hdim = model.spec().network.hidden;
        AgentActor {
            agent,
            h: Array2::zeros((1, hdim)),
            h_hat: Array2::zeros((model.spec().n_agents(), hdim)),
            last_action: None,
        }
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn hidden(&self) -> &Array2<T> {
        &self.h
    }

    pub fn reset(&mut self) {
        self.h.fill(T::zero());
        self.h_hat.fill(T::zero());
        self.last_action = None;
    }

    /// Records the action actually executed (after exploration).
    pub fn record_action(&mut self, action: usize) {
        self.last_action = Some(action);
    }

    /// Advances the recurrent state on `obs` and returns local Qs. With `rng`
    /// beliefs are sampled and stochastic top-k (if configured) is used;
    /// without it the step is deterministic.
    pub fn act<R: RngCore + ?Sized>(
        &mut self,
        model: &AimModel,
        params: &ParamSet<T>,
        obs: &ObservationFrame,
        mut rng: Option<&mut R>,
    ) -> Result<ActorStep<T>> {
        let spec = model.spec();
        let n = spec.n_agents();
        let i = self.agent;
        ensure!(i < n, Contract, "agent {i} out of range");
        let mut g = Graph::new();
        let bind = g.bind_frozen(params);

        let mut x = vec![T::zero(); spec.agent_input_dim()];
        write_agent_input(spec, obs, self.last_action, i, &mut x);
        let xv = g.row(&x);
        let e = model.agent_embed().forward(&mut g, &bind, xv)?;
        let h_prev = g.constant(self.h.clone());
        let h = model.agent_gru().step(&mut g, &bind, e, h_prev)?;

        let h_hat = match model.perception() {
            Some(enc) => {
                let frames = row_portraits(&spec.layout, obs, i)?;
                let refs: Vec<&ObservationFrame> = frames.iter().collect();
                let prev = g.constant(self.h_hat.clone());
                Some(enc.step(&mut g, &bind, &refs, prev)?)
            }
            None => None,
        };

        let z = match model.belief() {
            Some(enc) => {
                let ids: Vec<usize> = (0..n - 1).map(|jj| pair_teammate(i, jj)).collect();
                let input = match (spec.ablation.belief_from_teammate_perspective, h_hat) {
                    (true, Some(hh)) => g.select_rows(hh, ids.clone())?,
                    _ => g.select_rows(h, vec![0; n - 1])?,
                };
                let head = enc.forward(&mut g, &bind, input, &ids)?;
                let noise = rng.as_deref_mut().map(|r| standard_noise::<T, _>(n - 1, enc.latent_dim(), r));
                Some(sample_latent(&mut g, &head, noise)?)
            }
            None => None,
        };

        let (c_row, selected, attention, fused) = match (model.scorer(), model.fusion(), h_hat) {
            (Some(scorer), Some(fusion), Some(hh)) => {
                let c = scorer.evaluate(&mut g, &bind, hh, n)?;
                let c_row: Vec<T> = g.value(c).iter().copied().collect();
                let row64: Vec<f64> = c_row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
                let selected = model.select(&row64, i, rng)?;
                let keys = g.select_rows(hh, selected.clone())?;
                let values = match z {
                    Some(z) => g.select_rows(z, selected.iter().map(|&j| pair_offset(i, j)).collect())?,
                    None => keys,
                };
                let att = fusion.forward(&mut g, &bind, h, keys, values, selected.len())?;
                let w: Vec<T> = g.value(att.weights).iter().copied().collect();
                (Some(c_row), selected, Some(w), Some(att.output))
            }
            _ => (None, Vec::new(), None, None),
        };

        let q = model.q_head().forward(&mut g, &bind, h, fused)?;
        let q: Vec<T> = g.value(q).iter().copied().collect();
        self.h = g.value(h).clone();
        if let Some(hh) = h_hat {
            self.h_hat = g.value(hh).clone();
        }
        Ok(ActorStep {
            q,
            c_row,
            selected,
            attention,
        })
    }
}

/// One actor per agent, each fed only its own frame.
#[derive(Clone, Debug)]
pub struct Team<T> {
    pub actors: Vec<AgentActor<T>>,
}

impl<T: Real> Team<T> {
    pub fn new(model: &AimModel) -> Self {
        Team {
            actors: (0..model.spec().n_agents()).map(|i| AgentActor::new(model, i)).collect(),
        }
    }

    pub fn reset(&mut self) {
        self.actors.iter_mut().for_each(AgentActor::reset);
    }

    pub fn act<R: RngCore + ?Sized>(
        &mut self,
        model: &AimModel,
        params: &ParamSet<T>,
        frames: &[ObservationFrame],
        mut rng: Option<&mut R>,
    ) -> Result<Vec<ActorStep<T>>> {
        ensure!(frames.len() == self.actors.len(), Contract, "one frame per agent");
        let mut out = Vec::with_capacity(frames.len());
        for (a, f) in self.actors.iter_mut().zip(frames) {
            out.push(a.act(model, params, f, rng.as_deref_mut())?);
        }
        Ok(out)
    }

    pub fn record_actions(&mut self, actions: &[usize]) {
        for (a, &u) in self.actors.iter_mut().zip(actions) {
            a.record_action(u);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::{Env, EnvConfig, Episode, EpisodeBatch};
    use crate::trainer::config::{Ablations, RunConfig};
    use crate::trainer::model::ModelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(ablation: Ablations) -> RunConfig {
        let mut c = RunConfig::default();
        c.env = EnvConfig {
            grid_size: 5,
            n_agents: 3,
            n_prey: 1,
            horizon: 6,
            ..EnvConfig::default()
        };
        c.network.hidden = 8;
        c.network.latent = 4;
        c.network.attention_dim = 4;
        c.network.mixer_embed = 4;
        c.network.hyper_hidden = 8;
        c.k = 2;
        c.ablation = ablation;
        c
    }

    fn random_episode(config: &EnvConfig, seed: u64) -> Episode {
        let mut env = Env::new(config.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut ep = Episode::start(&env);
        while !env.is_terminal() {
            let acts: Vec<usize> = (0..config.n_agents).map(|_| rng.random_range(0..config.n_actions())).collect();
            let out = env.step(&acts).unwrap();
            ep.push(&env, acts, out.reward);
        }
        ep
    }

    #[test]
    fn actor_matches_batched_unroll() {
        for ablation in [
            Ablations::default(),
            Ablations { no_belief: true, ..Ablations::default() },
            Ablations::all(),
            Ablations { belief_from_teammate_perspective: true, ..Ablations::default() },
        ] {
            let config = tiny_config(ablation);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut params = ParamSet::<f64>::new();
            let model = AimModel::new(ModelSpec::from_config(&config), &mut params, &mut rng).unwrap();
            let ep = random_episode(&config.env, 9);
            let batch = EpisodeBatch::collate(&[&ep]).unwrap();
            let mut g = Graph::new();
            let bind = g.bind_frozen(&params);
            let un = model.unroll(&mut g, &bind, &batch, ep.len() + 1, None::<&mut ChaCha8Rng>).unwrap();
            let qs = g.value(un.q).clone();

            let mut team = Team::<f64>::new(&model);
            let n = config.env.n_agents;
            for t in 0..=ep.len() {
                let steps = team.act(&model, &params, &ep.frames[t], None::<&mut ChaCha8Rng>).unwrap();
                for (i, s) in steps.iter().enumerate() {
                    for (a, &q) in s.q.iter().enumerate() {
                        assert!((q - qs[[t * n + i, a]]).abs() < 1e-12, "{ablation:?} t={t} i={i}");
                    }
                    if let Some(c) = un.c {
                        let cv = g.value(c);
                        assert_eq!(s.c_row.as_ref().unwrap(), &cv.row(t * n + i).to_vec());
                        assert_eq!(s.selected, un.selected[(t * n + i) * 2..(t * n + i + 1) * 2]);
                    }
                }
                if t < ep.len() {
                    team.record_actions(&ep.actions[t]);
                }
            }
        }
    }

    #[test]
    fn q_depends_only_on_own_observation_stream() {
        let config = tiny_config(Ablations::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::<f64>::new();
        let model = AimModel::new(ModelSpec::from_config(&config), &mut params, &mut rng).unwrap();
        let a = random_episode(&config.env, 1);
        let b = random_episode(&config.env, 2);
        // Agent 0 sees a's stream in both worlds; its teammates see different ones.
        let mut x = AgentActor::<f64>::new(&model, 0);
        let mut y = AgentActor::<f64>::new(&model, 0);
        let mut others = Team::<f64>::new(&model);
        for t in 0..=a.len().min(b.len()) {
            others.act(&model, &params, &b.frames[t], None::<&mut ChaCha8Rng>).unwrap();
            let qx = x.act(&model, &params, &a.frames[t][0], None::<&mut ChaCha8Rng>).unwrap();
            let qy = y.act(&model, &params, &a.frames[t][0], None::<&mut ChaCha8Rng>).unwrap();
            assert_eq!(qx, qy);
            if t < a.len() {
                x.record_action(a.actions[t][0]);
                y.record_action(a.actions[t][0]);
            }
        }
    }
}
