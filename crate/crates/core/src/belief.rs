//! Belief portraits: a diagonal Gaussian latent per teammate, encoded from the
//! agent's own trajectory and the teammate's id.
//!
//! The encoder is the prior `p(z | h_i, id_j)`. During centralized training a
//! variational posterior `q_ξ(z | h_i, a_j, id_j)` additionally sees the
//! teammate's true action; pulling the prior toward it (KL(prior ‖ posterior))
//! makes the latent predictive of the teammate's behaviour. A continuity term
//! keeps consecutive samples pointing the same way.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{
    cosine_rows, gaussian_sample, gaussian_sample_graph, kl_diag_gaussians_graph, one_hot_rows, positive_std, real,
    Activation, Binding, Graph, Mlp, ParamSet, Real, Var, STD_FLOOR,
};
use crate::error::{ensure, Result};

pub const LATENT_DIM: usize = 16;

/// Mean and standard deviation rows of a Gaussian head.
#[derive(Clone, Copy, Debug)]
pub struct GaussianHead {
    pub mu: Var,
    pub delta: Var,
}

fn gaussian_head<T: Real>(g: &mut Graph<'_, T>, out: Var, latent: usize) -> Result<GaussianHead> {
    let mu = g.slice_cols(out, 0, latent)?;
    let pre = g.slice_cols(out, latent, 2 * latent)?;
    let delta = positive_std(g, pre, real(STD_FLOOR));
    Ok(GaussianHead { mu, delta })
}

/// Standard-normal noise of the given shape.
pub fn standard_noise<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || real(rng.sample::<f64, _>(StandardNormal)))
}

/// The prior network, shared across agents and teammates.
#[derive(Clone, Debug)]
pub struct BeliefEncoder {
    mlp: Mlp,
    input: usize,
    n_agents: usize,
    latent: usize,
}

impl BeliefEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        input: usize,
        n_agents: usize,
        hidden: usize,
        latent: usize,
        rng: &mut R,
    ) -> Self {
        BeliefEncoder {
            mlp: Mlp::new(params, "belief.prior", &[input + n_agents, hidden, 2 * latent], Activation::Linear, rng),
            input,
            n_agents,
            latent,
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    /// `h` holds one row per (agent, teammate) pair; `teammates[r]` is the id
    /// the row is conditioned on.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, h: Var, teammates: &[usize]) -> Result<GaussianHead> {
        ensure!(g.value(h).nrows() == teammates.len(), Contract, "belief: one teammate id per row");
        let ids = g.constant(one_hot_rows(teammates, self.n_agents)?);
        let x = g.concat_cols(&[h, ids])?;
        let out = self.mlp.forward(g, bind, x)?;
        gaussian_head(g, out, self.latent)
    }
}

/// The variational posterior `q_ξ`, only used by the training loss.
#[derive(Clone, Debug)]
pub struct VariationalPosterior {
    mlp: Mlp,
    n_agents: usize,
    n_actions: usize,
    latent: usize,
}

impl VariationalPosterior {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        input: usize,
        n_agents: usize,
        n_actions: usize,
        hidden: usize,
        latent: usize,
        rng: &mut R,
    ) -> Self {
        let sizes = [input + n_actions + n_agents, hidden, 2 * latent];
        VariationalPosterior {
            mlp: Mlp::new(params, "belief.posterior", &sizes, Activation::Linear, rng),
            n_agents,
            n_actions,
            latent,
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        bind: &Binding,
        h: Var,
        actions: &[usize],
        teammates: &[usize],
    ) -> Result<GaussianHead> {
        let rows = g.value(h).nrows();
        ensure!(actions.len() == rows && teammates.len() == rows, Contract, "posterior: one action and id per row");
        let a = g.constant(one_hot_rows(actions, self.n_actions)?);
        let ids = g.constant(one_hot_rows(teammates, self.n_agents)?);
        let x = g.concat_cols(&[h, a, ids])?;
        let out = self.mlp.forward(g, bind, x)?;
        gaussian_head(g, out, self.latent)
    }
}

/// One teammate's belief portrait.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefSample<T> {
    pub teammate: usize,
    pub mu: Vec<T>,
    pub delta: Vec<T>,
    pub z: Vec<T>,
}

/// Agent `agent`'s belief about `teammate`. With `noise = Some(ε)` (training)
/// `z = mu + delta ⊙ ε`; with `None` (evaluation) `z = mu`.
pub fn belief_encode<T: Real>(
    encoder: &BeliefEncoder,
    params: &ParamSet<T>,
    h: &[T],
    agent: usize,
    teammate: usize,
    noise: Option<&[T]>,
) -> Result<BeliefSample<T>> {
    ensure!(
        agent < encoder.n_agents && teammate < encoder.n_agents && agent != teammate,
        Contract,
        "belief of agent {agent} about {teammate} (N = {})",
        encoder.n_agents
    );
    ensure!(h.len() == encoder.input, Config, "belief: input width {} expected {}", h.len(), encoder.input);
    let mut g = Graph::new();
    let bind = g.bind_frozen(params);
    let x = g.row(h);
    let head = encoder.forward(&mut g, &bind, x, &[teammate])?;
    let mu: Vec<T> = g.value(head.mu).iter().copied().collect();
    let delta: Vec<T> = g.value(head.delta).iter().copied().collect();
    let z = match noise {
        Some(eps) => gaussian_sample(&mu, &delta, eps)?,
        None => mu.clone(),
    };
    Ok(BeliefSample { teammate, mu, delta, z })
}

/// Draws `z` for a batch of heads (`noise` must match the head's shape), or
/// returns `mu` in evaluation mode.
pub fn sample_latent<T: Real>(g: &mut Graph<'_, T>, head: &GaussianHead, noise: Option<Array2<T>>) -> Result<Var> {
    match noise {
        None => Ok(head.mu),
        Some(eps) => gaussian_sample_graph(g, head.mu, head.delta, eps),
    }
}

/// Masked mean of KL(prior ‖ posterior) over rows; `mask` is `rows×1`.
pub fn mi_loss<T: Real>(g: &mut Graph<'_, T>, prior: &GaussianHead, posterior: &GaussianHead, mask: &Array2<T>) -> Result<Var> {
    ensure!(
        g.value(prior.mu).dim() == g.value(posterior.mu).dim(),
        Contract,
        "mi_loss: prior and posterior shapes differ"
    );
    let kl = kl_diag_gaussians_graph(g, prior.mu, prior.delta, posterior.mu, posterior.delta)?;
    g.masked_mean(kl, mask)
}

/// Masked mean of `−cos(z_prev, z_curr)` over rows.
pub fn continuity_loss<T: Real>(g: &mut Graph<'_, T>, z_prev: Var, z_curr: Var, mask: &Array2<T>) -> Result<Var> {
    ensure!(g.value(z_prev).dim() == g.value(z_curr).dim(), Contract, "continuity_loss: shapes differ");
    let cos = cosine_rows(g, z_prev, z_curr, real(1e-8))?;
    let neg = g.neg(cos);
    g.masked_mean(neg, mask)
}
