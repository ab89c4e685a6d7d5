//! The full network and its batched, time-major training forward.
//!
//! Row layouts used throughout (B episodes, N agents, `t` the step):
//! - agent rows `r = (t·B + b)·N + i`
//! - portrait rows `r·N + j` (all `j`, self included)
//! - pair rows `r·(N−1) + jj`, one per teammate `j ≠ i` in ascending order

use ndarray::Array2;
use rand::{Rng, RngCore};

use super::config::{Ablations, Lambdas, NetworkConfig, RunConfig};
use crate::action_portrait::{ce_loss, model_loss_graph, ActionPredictor};
use crate::agent_mixer::{td_loss, total_loss_graph, LocalQHead, Mixer};
use crate::belief::{continuity_loss, mi_loss, sample_latent, standard_noise, BeliefEncoder, GaussianHead, VariationalPosterior};
use crate::diffcore::{Activation, Binding, Dense, Graph, GruCell, ParamSet, Real, Var};
use crate::dual_filter::{
    df_loss_graph, sample_topk, select_topk, self_loss_graph, symmetry_loss_graph, AccuracyScorer, BeliefFusion,
};
use crate::envkit::{state_dim, EpisodeBatch, ObsLayout, ObservationFrame};
use crate::error::{ensure, Result};
use crate::perception::{row_portraits, PortraitEncoder};

/// Shape information the model is built from.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub layout: ObsLayout,
    pub n_actions: usize,
    pub state_dim: usize,
    pub k: usize,
    pub stochastic_topk: bool,
    pub ablation: Ablations,
    pub network: NetworkConfig,
}

impl ModelSpec {
    pub fn from_config(config: &RunConfig) -> Self {
        ModelSpec {
            layout: ObsLayout::new(&config.env),
            n_actions: config.env.n_actions(),
            state_dim: state_dim(&config.env),
            k: config.k,
            stochastic_topk: config.stochastic_topk,
            ablation: config.ablation,
            network: config.network,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.layout.n_agents
    }

    /// Width of the per-agent network input: frame, last action, id.
    pub fn agent_input_dim(&self) -> usize {
        self.layout.feature_dim() + self.n_actions + self.n_agents()
    }
}

#[derive(Clone, Debug)]
pub struct AimModel {
    spec: ModelSpec,
    agent_embed: Dense,
    agent_gru: GruCell,
    perception: Option<PortraitEncoder>,
    belief: Option<(BeliefEncoder, VariationalPosterior)>,
    predictor: Option<ActionPredictor>,
    filter: Option<(AccuracyScorer, BeliefFusion)>,
    q_head: LocalQHead,
    mixer: Mixer,
}

/// Graph handles produced by [`AimModel::unroll`].
#[derive(Clone, Debug)]
pub struct Unrolled {
    pub steps: usize,
    pub batch: usize,
    /// Local Qs, one agent row each.
    pub q: Var,
    pub h: Var,
    pub h_hat: Option<Var>,
    /// Evaluation matrices, one agent row each (row-stochastic over `j`).
    pub c: Option<Var>,
    /// `k` selected teammates per agent row.
    pub selected: Vec<usize>,
    pub prior: Option<GaussianHead>,
    pub belief_input: Option<Var>,
    pub z: Option<Var>,
}

/// Loss handles plus action-prediction bookkeeping.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub td: Var,
    pub mi: Var,
    pub cn: Var,
    pub ce: Var,
    pub sy: Var,
    pub se: Var,
    pub md: Var,
    pub df: Var,
    pub ce_correct: usize,
    pub ce_count: usize,
}

/// Writes `[frame features | last-action one-hot | id one-hot]`.
pub fn write_agent_input<T: Real>(
    spec: &ModelSpec,
    frame: &ObservationFrame,
    last_action: Option<usize>,
    agent: usize,
    out: &mut [T],
) {
    let f = spec.layout.feature_dim();
    frame.write_features(spec.layout.grid_size, &mut out[..f]);
    out[f..].fill(T::zero());
    if let Some(a) = last_action {
        out[f + a] = T::one();
    }
    out[f + spec.n_actions + agent] = T::one();
}

/// Teammate `j` of agent `i` as a pair offset `jj ∈ 0..N−1`.
pub fn pair_offset(i: usize, j: usize) -> usize {
    debug_assert_ne!(i, j);
    if j < i {
        j
    } else {
        j - 1
    }
}

/// Inverse of [`pair_offset`].
pub fn pair_teammate(i: usize, jj: usize) -> usize {
    if jj < i {
        jj
    } else {
        jj + 1
    }
}

fn zeros_var<T: Real>(g: &mut Graph<'_, T>, rows: usize, cols: usize) -> Var {
    g.constant(Array2::zeros((rows, cols)))
}

fn col<T: Real>(values: impl IntoIterator<Item = T>) -> Array2<T> {
    let v: Vec<T> = values.into_iter().collect();
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).expect("column")
}

impl AimModel {
    pub fn new<T: Real, R: Rng + ?Sized>(spec: ModelSpec, params: &mut ParamSet<T>, rng: &mut R) -> Result<Self> {
        let n = spec.n_agents();
        ensure!(n >= 2, Config, "the model needs at least two agents");
        ensure!(spec.k >= 1 && spec.k < n, Config, "k = {} must satisfy 1 ≤ k ≤ N−1", spec.k);
        let net = spec.network;
        let abl = spec.ablation;
        let h = net.hidden;

        let agent_embed = Dense::new(params, "agent.embed", spec.agent_input_dim(), h, Activation::Relu, rng);
        let agent_gru = GruCell::new(params, "agent.gru", h, h, rng);

        let uses_belief = !abl.no_belief;
        let needs_perception =
            !abl.no_filter || !abl.no_action || (uses_belief && abl.belief_from_teammate_perspective);
        let perception = needs_perception.then(|| PortraitEncoder::new(params, &spec.layout, h, rng));

        let belief = uses_belief.then(|| {
            let prior = BeliefEncoder::new(params, h, n, h, net.latent, rng);
            let post = VariationalPosterior::new(params, h, n, spec.n_actions, h, net.latent, rng);
            (prior, post)
        });
        let predictor = (!abl.no_action).then(|| {
            let latent = if uses_belief { net.latent } else { 0 };
            ActionPredictor::new(params, latent, h, h, spec.n_actions, rng)
        });
        let filter = if abl.no_filter {
            None
        } else {
            let scorer = AccuracyScorer::new(params, h, h, rng);
            let fusion = BeliefFusion::new(params, h, h, net.attention_dim, rng)?;
            Some((scorer, fusion))
        };
        let fused = match (&filter, uses_belief) {
            (None, _) => 0,
            (Some(_), true) => net.latent,
            (Some(_), false) => h,
        };
        let q_head = LocalQHead::new(params, h, fused, spec.n_actions, rng);
        let mixer = Mixer::new(net.mixer, params, n, spec.state_dim, net.mixer_embed, net.hyper_hidden, rng);
        Ok(AimModel {
            spec,
            agent_embed,
            agent_gru,
            perception,
            belief,
            predictor,
            filter,
            q_head,
            mixer,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn agent_embed(&self) -> &Dense {
        &self.agent_embed
    }

    pub fn agent_gru(&self) -> &GruCell {
        &self.agent_gru
    }

    pub fn perception(&self) -> Option<&PortraitEncoder> {
        self.perception.as_ref()
    }

    pub fn belief(&self) -> Option<&BeliefEncoder> {
        self.belief.as_ref().map(|b| &b.0)
    }

    pub fn posterior(&self) -> Option<&VariationalPosterior> {
        self.belief.as_ref().map(|b| &b.1)
    }

    pub fn predictor(&self) -> Option<&ActionPredictor> {
        self.predictor.as_ref()
    }

    pub fn scorer(&self) -> Option<&AccuracyScorer> {
        self.filter.as_ref().map(|f| &f.0)
    }

    pub fn fusion(&self) -> Option<&BeliefFusion> {
        self.filter.as_ref().map(|f| &f.1)
    }

    pub fn q_head(&self) -> &LocalQHead {
        &self.q_head
    }

    pub fn mixer(&self) -> &Mixer {
        &self.mixer
    }

    /// Chooses `k` teammates for `agent` from its row of `C`.
    pub fn select<R: Rng + ?Sized>(&self, row: &[f64], agent: usize, rng: Option<&mut R>) -> Result<Vec<usize>> {
        match rng {
            Some(rng) if self.spec.stochastic_topk => sample_topk(row, agent, self.spec.k, rng),
            _ => select_topk(row, agent, self.spec.k),
        }
    }

    /// Runs every network over steps `0..steps` of `batch`. With `rng` the
    /// beliefs are sampled (training); without it `z = mu` and top-k is
    /// deterministic.
    pub fn unroll<T: Real, R: RngCore + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        bind: &Binding,
        batch: &EpisodeBatch,
        steps: usize,
        mut rng: Option<&mut R>,
    ) -> Result<Unrolled> {
        let spec = &self.spec;
        let n = spec.n_agents();
        let bsz = batch.batch_size;
        ensure!(batch.n_agents == n, Contract, "batch has {} agents, model {n}", batch.n_agents);
        ensure!(steps >= 1 && steps <= batch.max_len + 1, Contract, "unroll: {steps} steps of a batch of length {}", batch.max_len);
        let hdim = spec.network.hidden;
        let rows_t = bsz * n;
        let rows = steps * rows_t;

        // Agent trajectory encoder.
        let in_dim = spec.agent_input_dim();
        let mut h_prev = zeros_var(g, rows_t, hdim);
        let mut h_steps = Vec::with_capacity(steps);
        let mut x = Array2::<T>::zeros((rows_t, in_dim));
        for t in 0..steps {
            for b in 0..bsz {
                for i in 0..n {
                    let last = (t > 0).then(|| batch.action(t - 1, b, i));
                    let row = x.row_mut(b * n + i).into_slice().expect("standard layout");
                    write_agent_input(spec, batch.frame(t, b, i), last, i, row);
                }
            }
            let xv = g.constant(x.clone());
            let e = self.agent_embed.forward(g, bind, xv)?;
            h_prev = self.agent_gru.step(g, bind, e, h_prev)?;
            h_steps.push(h_prev);
        }
        let h = g.concat_rows(&h_steps)?;

        // Perception portraits, all N×N per (t, b).
        let h_hat = match &self.perception {
            None => None,
            Some(enc) => {
                let mut hh = zeros_var(g, rows_t * n, hdim);
                let mut hh_steps = Vec::with_capacity(steps);
                for t in 0..steps {
                    let mut frames = Vec::with_capacity(rows_t * n);
                    for b in 0..bsz {
                        for i in 0..n {
                            frames.extend(row_portraits(&spec.layout, batch.frame(t, b, i), i)?);
                        }
                    }
                    let refs: Vec<&ObservationFrame> = frames.iter().collect();
                    hh = enc.step(g, bind, &refs, hh)?;
                    hh_steps.push(hh);
                }
                Some(g.concat_rows(&hh_steps)?)
            }
        };

        // Belief portraits, one per (agent, teammate) pair.
        let (prior, belief_input, z) = match &self.belief {
            None => (None, None, None),
            Some((enc, _)) => {
                let mut agent_rows = Vec::with_capacity(rows * (n - 1));
                let mut grid_rows = Vec::with_capacity(rows * (n - 1));
                let mut ids = Vec::with_capacity(rows * (n - 1));
                for r in 0..rows {
                    let i = r % n;
                    for jj in 0..n - 1 {
                        let j = pair_teammate(i, jj);
                        agent_rows.push(r);
                        grid_rows.push(r * n + j);
                        ids.push(j);
                    }
                }
                let input = match (spec.ablation.belief_from_teammate_perspective, h_hat) {
                    (true, Some(hh)) => g.select_rows(hh, grid_rows)?,
                    _ => g.select_rows(h, agent_rows)?,
                };
                let head = enc.forward(g, bind, input, &ids)?;
                let noise = match rng.as_deref_mut() {
                    Some(r) => Some(standard_noise::<T, _>(ids.len(), enc.latent_dim(), r)),
                    None => None,
                };
                let z = sample_latent(g, &head, noise)?;
                (Some(head), Some(input), Some(z))
            }
        };

        // Dual filter: score, select, fuse.
        let (c, selected, e) = match (&self.filter, h_hat) {
            (Some((scorer, fusion)), Some(hh)) => {
                let c = scorer.evaluate(g, bind, hh, n)?;
                let k = spec.k;
                let mut selected = Vec::with_capacity(rows * k);
                let cv = g.value(c).mapv(|v| v.to_f64().unwrap_or(f64::NAN));
                for r in 0..rows {
                    let row: Vec<f64> = cv.row(r).to_vec();
                    selected.extend(self.select(&row, r % n, rng.as_deref_mut())?);
                }
                let key_rows: Vec<usize> = selected.iter().enumerate().map(|(s, &j)| (s / k) * n + j).collect();
                let keys = g.select_rows(hh, key_rows.clone())?;
                let values = match z {
                    Some(z) => {
                        let pair_rows = selected
                            .iter()
                            .enumerate()
                            .map(|(s, &j)| {
                                let r = s / k;
                                r * (n - 1) + pair_offset(r % n, j)
                            })
                            .collect();
                        g.select_rows(z, pair_rows)?
                    }
                    None => keys,
                };
                let fused = fusion.forward(g, bind, h, keys, values, k)?;
                (Some(c), selected, Some(fused.output))
            }
            _ => (None, Vec::new(), None),
        };

        let q = self.q_head.forward(g, bind, h, e)?;
        Ok(Unrolled {
            steps,
            batch: bsz,
            q,
            h,
            h_hat,
            c,
            selected,
            prior,
            belief_input,
            z,
        })
    }

    /// Bootstrapped `Q̂_tot(s_{t+1})` for every `(t, b)`, `t ∈ 0..T`, from
    /// the target parameters (greedy per-agent maxima, beliefs at their mean).
    pub fn target_next_values<T: Real>(&self, target: &ParamSet<T>, batch: &EpisodeBatch) -> Result<Array2<T>> {
        let n = self.spec.n_agents();
        let bsz = batch.batch_size;
        let steps = batch.max_len;
        let mut g = Graph::new();
        let bind = g.bind_frozen(target);
        let un = self.unroll(&mut g, &bind, batch, steps + 1, None::<&mut dyn RngCore>)?;
        let qv = g.value(un.q);
        let mut maxes = Array2::<T>::zeros((steps * bsz, n));
        for t in 1..=steps {
            for b in 0..bsz {
                for i in 0..n {
                    let r = (t * bsz + b) * n + i;
                    maxes[[(t - 1) * bsz + b, i]] = qv.row(r).fold(T::neg_infinity(), |m, &x| m.max(x));
                }
            }
        }
        let states = self.states(batch, 1, steps);
        let qm = g.constant(maxes);
        let sv = g.constant(states);
        let tot = self.mixer.forward(&mut g, &bind, qm, sv)?;
        Ok(g.value(tot).clone())
    }

    /// Global states for steps `from..from + steps`, one `(t, b)` row each.
    fn states<T: Real>(&self, batch: &EpisodeBatch, from: usize, steps: usize) -> Array2<T> {
        let bsz = batch.batch_size;
        Array2::from_shape_fn((steps * bsz, batch.state_dim), |(r, c)| {
            let (t, b) = (from + r / bsz, r % bsz);
            T::from_f32(batch.state(t, b)[c]).expect("state")
        })
    }

    /// Every loss term over the first `batch.max_len` steps of `un`.
    pub fn losses<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        bind: &Binding,
        batch: &EpisodeBatch,
        un: &Unrolled,
        target_next: &Array2<T>,
        gamma: f64,
        lambdas: &Lambdas,
    ) -> Result<LossVars> {
        let n = self.spec.n_agents();
        let bsz = batch.batch_size;
        let steps = batch.max_len;
        ensure!(un.steps >= steps, Contract, "losses need {steps} unrolled steps");
        let team_rows = steps * bsz;
        let rows = team_rows * n;
        let mask_tb = |r: usize| T::from_f32(batch.mask[r]).expect("mask");
        let abl = self.spec.ablation;

        // TD.
        let q = if un.steps == steps { un.q } else { g.select_rows(un.q, (0..rows).collect())? };
        let taken: Vec<usize> = (0..rows).map(|r| batch.actions[r]).collect();
        let chosen = g.gather_cols(q, taken)?;
        let chosen = g.reshape(chosen, team_rows, n)?;
        let sv = g.constant(self.states(batch, 0, steps));
        let q_tot = self.mixer.forward(g, bind, chosen, sv)?;
        let target = g.constant(target_next.clone());
        let rewards: Vec<T> = batch.rewards.iter().map(|&r| T::from_f32(r).expect("reward")).collect();
        let mask_team: Vec<T> = (0..team_rows).map(mask_tb).collect();
        let gamma_t = T::from_f64(gamma).expect("gamma");
        let td = td_loss(g, q_tot, target, &rewards, &batch.terminal, &mask_team, gamma_t)?;

        let zero = g.scalar(T::zero());
        let pairs = rows * (n - 1);
        let pair_mask = col((0..pairs).map(|p| mask_tb(p / (n - 1) / n)));
        let pair_teammates: Vec<usize> = (0..pairs).map(|p| pair_teammate((p / (n - 1)) % n, p % (n - 1))).collect();
        let pair_true_actions: Vec<usize> = (0..pairs)
            .map(|p| {
                let r = p / (n - 1);
                batch.actions[(r / n) * n + pair_teammates[p]]
            })
            .collect();

        // Belief losses.
        let (mi, cn) = match (&self.belief, un.prior, un.belief_input, un.z) {
            (Some((_, post)), Some(prior), Some(input), Some(z)) if !abl.no_belief => {
                let (prior, input, z) = if un.steps == steps {
                    (prior, input, z)
                } else {
                    let keep: Vec<usize> = (0..pairs).collect();
                    let prior = GaussianHead {
                        mu: g.select_rows(prior.mu, keep.clone())?,
                        delta: g.select_rows(prior.delta, keep.clone())?,
                    };
                    (prior, g.select_rows(input, keep.clone())?, g.select_rows(z, keep)?)
                };
                let posterior = post.forward(g, bind, input, &pair_true_actions, &pair_teammates)?;
                let mi = mi_loss(g, &prior, &posterior, &pair_mask)?;
                let cn = if steps >= 2 {
                    let per_t = bsz * n * (n - 1);
                    let prev = g.select_rows(z, (0..pairs - per_t).collect())?;
                    let curr = g.select_rows(z, (per_t..pairs).collect())?;
                    let m = col((per_t..pairs).map(|p| pair_mask[[p, 0]]));
                    continuity_loss(g, prev, curr, &m)?
                } else {
                    zero
                };
                (mi, cn)
            }
            _ => (zero, zero),
        };

        // Action portraits.
        let (ce, ce_correct, ce_count) = match (&self.predictor, un.h_hat) {
            (Some(pred), Some(hh)) if !abl.no_action => {
                let grid_rows: Vec<usize> = (0..pairs).map(|p| (p / (n - 1)) * n + pair_teammates[p]).collect();
                let h_pairs = g.select_rows(hh, grid_rows)?;
                let z_pairs = match un.z {
                    Some(z) if un.steps == steps => Some(z),
                    Some(z) => Some(g.select_rows(z, (0..pairs).collect())?),
                    None => None,
                };
                let probs = pred.forward(g, bind, z_pairs, h_pairs)?;
                let ce = ce_loss(g, probs, &pair_true_actions, &pair_mask)?;
                let pv = g.value(probs);
                let mut correct = 0;
                let mut count = 0;
                for p in 0..pairs {
                    if pair_mask[[p, 0]] > T::zero() {
                        count += 1;
                        let row = pv.row(p);
                        let best = (0..row.len()).fold(0, |b, a| if row[a] > row[b] { a } else { b });
                        if best == pair_true_actions[p] {
                            correct += 1;
                        }
                    }
                }
                (ce, correct, count)
            }
            _ => (zero, 0, 0),
        };

        // Filter regularizers.
        let (sy, se) = match un.c {
            Some(c) if !abl.no_filter => {
                let c = if un.steps == steps { c } else { g.select_rows(c, (0..rows).collect())? };
                let m = col(mask_team.iter().copied());
                let sy_rows = symmetry_loss_graph(g, c, n)?;
                let se_rows = self_loss_graph(g, c, n)?;
                (g.masked_mean(sy_rows, &m)?, g.masked_mean(se_rows, &m)?)
            }
            _ => (zero, zero),
        };

        let md = model_loss_graph(g, mi, cn, ce, &lambdas.model())?;
        let df = df_loss_graph(g, sy, se, &lambdas.filter())?;
        let total = total_loss_graph(g, td, md, df)?;
        Ok(LossVars {
            total,
            td,
            mi,
            cn,
            ce,
            sy,
            se,
            md,
            df,
            ce_correct,
            ce_count,
        })
    }
}
