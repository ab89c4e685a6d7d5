//! Local Q heads, the monotonic mixer and the TD objective.
//!
//! The mixer follows the hypernetwork design: the global state generates the
//! mixing weights, which pass through `abs` so `Q_tot` is non-decreasing in
//! every local Q. That makes the joint greedy action the tuple of per-agent
//! greedy actions, which is what lets agents act on their own Q alone.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{real, Activation, Binding, Dense, Graph, Mlp, ParamSet, Real, Var};
use crate::error::{ensure, Result};

/// Linear map from `(h_i, e_i)` to one Q per action.
#[derive(Clone, Debug)]
pub struct LocalQHead {
    dense: Dense,
    hidden: usize,
    fused: usize,
}

impl LocalQHead {
    /// `fused = 0` builds the plain recurrent head on `h_i` alone.
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        hidden: usize,
        fused: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Self {
        LocalQHead {
            dense: Dense::new(params, "agent.q", hidden + fused, n_actions, Activation::Linear, rng),
            hidden,
            fused,
        }
    }

    pub fn dense(&self) -> &Dense {
        &self.dense
    }

    pub fn fused_dim(&self) -> usize {
        self.fused
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, h: Var, e: Option<Var>) -> Result<Var> {
        ensure!(g.value(h).ncols() == self.hidden, Config, "local_q: hidden width");
        let x = match e {
            Some(e) => {
                ensure!(g.value(e).ncols() == self.fused, Config, "local_q: fused width");
                g.concat_cols(&[h, e])?
            }
            None => {
                ensure!(self.fused == 0, Config, "local_q: missing fused input");
                h
            }
        };
        self.dense.forward(g, bind, x)
    }
}

pub fn local_q<T: Real>(head: &LocalQHead, params: &ParamSet<T>, h: &[T], e: Option<&[T]>) -> Result<Vec<T>> {
    let mut g = Graph::new();
    let bind = g.bind_frozen(params);
    let hv = g.row(h);
    let ev = e.map(|e| g.row(e));
    let q = head.forward(&mut g, &bind, hv, ev)?;
    Ok(g.value(q).iter().copied().collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    #[default]
    Qmix,
    Vdn,
}

/// Hypernetwork mixer.
#[derive(Clone, Debug)]
pub struct QmixMixer {
    hyper_w1: Mlp,
    hyper_b1: Dense,
    hyper_w2: Mlp,
    hyper_v: Mlp,
    n_agents: usize,
    state_dim: usize,
    embed: usize,
}

impl QmixMixer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        n_agents: usize,
        state_dim: usize,
        embed: usize,
        hyper_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let lin = Activation::Linear;
        QmixMixer {
            hyper_w1: Mlp::new(params, "mixer.hyper_w1", &[state_dim, hyper_hidden, n_agents * embed], lin, rng),
            hyper_b1: Dense::new(params, "mixer.hyper_b1", state_dim, embed, lin, rng),
            hyper_w2: Mlp::new(params, "mixer.hyper_w2", &[state_dim, hyper_hidden, embed], lin, rng),
            hyper_v: Mlp::new(params, "mixer.hyper_v", &[state_dim, embed, 1], lin, rng),
            n_agents,
            state_dim,
            embed,
        }
    }

    /// Non-negative first- and second-layer weights, `R×(N·E)` and `R×E`.
    pub fn weights<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, state: Var) -> Result<(Var, Var)> {
        let w1 = self.hyper_w1.forward(g, bind, state)?;
        let w2 = self.hyper_w2.forward(g, bind, state)?;
        Ok((g.abs(w1), g.abs(w2)))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, qs: Var, state: Var) -> Result<Var> {
        ensure!(g.value(qs).ncols() == self.n_agents, Contract, "mixer: expected {} local Qs", self.n_agents);
        ensure!(g.value(state).ncols() == self.state_dim, Config, "mixer: state width");
        ensure!(g.value(qs).nrows() == g.value(state).nrows(), Contract, "mixer: row mismatch");
        let (w1, w2) = self.weights(g, bind, state)?;
        let mut acc = self.hyper_b1.forward(g, bind, state)?;
        let e = self.embed;
        for i in 0..self.n_agents {
            let qi = g.slice_cols(qs, i, i + 1)?;
            let wi = g.slice_cols(w1, i * e, (i + 1) * e)?;
            let term = g.mul_col(wi, qi)?;
            acc = g.add(acc, term)?;
        }
        let hidden = g.elu(acc);
        let prod = g.mul(hidden, w2)?;
        let y = g.sum_cols(prod);
        let v = self.hyper_v.forward(g, bind, state)?;
        g.add(y, v)
    }
}

#[derive(Clone, Debug)]
pub enum Mixer {
    Qmix(QmixMixer),
    /// `Q_tot = Σ q_i`: the additive limit with all weights 1 and no bias.
    Vdn { n_agents: usize },
}

impl Mixer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        kind: MixerKind,
        params: &mut ParamSet<T>,
        n_agents: usize,
        state_dim: usize,
        embed: usize,
        hyper_hidden: usize,
        rng: &mut R,
    ) -> Self {
        match kind {
            MixerKind::Qmix => Mixer::Qmix(QmixMixer::new(params, n_agents, state_dim, embed, hyper_hidden, rng)),
            MixerKind::Vdn => Mixer::Vdn { n_agents },
        }
    }

    /// `qs` is `R×N` chosen local Qs, `state` `R×S`; returns `R×1`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, qs: Var, state: Var) -> Result<Var> {
        match self {
            Mixer::Qmix(m) => m.forward(g, bind, qs, state),
            Mixer::Vdn { n_agents } => {
                ensure!(g.value(qs).ncols() == *n_agents, Contract, "mixer: expected {n_agents} local Qs");
                Ok(g.sum_cols(qs))
            }
        }
    }
}

/// `Q_tot` for one joint choice.
pub fn mix<T: Real>(mixer: &Mixer, params: &ParamSet<T>, chosen_qs: &[T], state: &[T]) -> Result<T> {
    let mut g = Graph::new();
    let bind = g.bind_frozen(params);
    let q = g.row(chosen_qs);
    let s = g.row(state);
    let y = mixer.forward(&mut g, &bind, q, s)?;
    Ok(g.scalar_value(y))
}

/// Per-row argmax; ties go to the lowest index.
pub fn greedy_actions<T: Real>(q: &Array2<T>) -> Vec<usize> {
    q.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (a, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// Masked mean of `(Q_tot − y)²` with `y = r + γ·(1 − done)·Q̂_tot(next)`.
///
/// `target_next` is read as a value only, so no gradient can reach whatever
/// produced it.
pub fn td_loss<T: Real>(
    g: &mut Graph<'_, T>,
    q_tot: Var,
    target_next: Var,
    rewards: &[T],
    terminal: &[bool],
    mask: &[T],
    gamma: T,
) -> Result<Var> {
    let rows = g.value(q_tot).nrows();
    ensure!(
        g.value(q_tot).ncols() == 1 && g.value(target_next).dim() == (rows, 1),
        Contract,
        "td_loss: Q_tot and target must be {rows}×1"
    );
    ensure!(
        rewards.len() == rows && terminal.len() == rows && mask.len() == rows,
        Contract,
        "td_loss: per-row inputs must have {rows} entries"
    );
    let next = g.value(target_next);
    let y = Array2::from_shape_fn((rows, 1), |(r, _)| {
        let bootstrap = if terminal[r] { T::zero() } else { gamma * next[[r, 0]] };
        rewards[r] + bootstrap
    });
    let y = g.constant(y);
    let err = g.sub(q_tot, y)?;
    let sq = g.square(err);
    let mask = Array2::from_shape_vec((rows, 1), mask.to_vec()).expect("shape");
    g.masked_mean(sq, &mask)
}

pub fn total_loss(td: f64, md: f64, df: f64) -> f64 {
    td + md + df
}

pub fn total_loss_graph<T: Real>(g: &mut Graph<'_, T>, td: Var, md: Var, df: Var) -> Result<Var> {
    let a = g.add(td, md)?;
    g.add(a, df)
}

/// Convenience for scalar terms that an ablation switches off.
pub fn zero_loss<T: Real>(g: &mut Graph<'_, T>) -> Var {
    g.scalar(real(0.0))
}
