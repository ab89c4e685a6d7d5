//! Action portraits: predicted teammate actions from belief and perception.
//!
//! The cross-entropy against the teammate's true action is the training
//! signal that shapes both portraits; predictions are never fed to the
//! agent's Q-network directly.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{real, softmax, Activation, Binding, Graph, Mlp, ParamSet, Real, Var};
use crate::error::{ensure, Result};

/// Probabilities below this are clamped before the log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ActionPredictor {
    mlp: Mlp,
    latent: usize,
    perception: usize,
}

impl ActionPredictor {
    /// `latent = 0` drops the belief input (perception only).
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        latent: usize,
        perception: usize,
        hidden: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Self {
        let sizes = [latent + perception, hidden, n_actions];
        ActionPredictor {
            mlp: Mlp::new(params, "action.predictor", &sizes, Activation::Linear, rng),
            latent,
            perception,
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Logits for rows of `(z, ĥ)` pairs.
    pub fn logits<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, z: Option<Var>, h_hat: Var) -> Result<Var> {
        let x = match z {
            Some(z) => {
                ensure!(g.value(z).ncols() == self.latent, Config, "action predictor: latent width");
                g.concat_cols(&[z, h_hat])?
            }
            None => {
                ensure!(self.latent == 0, Config, "action predictor expects a belief input");
                h_hat
            }
        };
        ensure!(g.value(h_hat).ncols() == self.perception, Config, "action predictor: perception width");
        self.mlp.forward(g, bind, x)
    }

    /// Row-wise action distributions.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, z: Option<Var>, h_hat: Var) -> Result<Var> {
        let logits = self.logits(g, bind, z, h_hat)?;
        Ok(g.softmax_rows(logits))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionPrediction<T> {
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

pub fn predict_action<T: Real>(
    predictor: &ActionPredictor,
    params: &ParamSet<T>,
    z: Option<&[T]>,
    h_hat: &[T],
) -> Result<ActionPrediction<T>> {
    let mut g = Graph::new();
    let bind = g.bind_frozen(params);
    let zv = z.map(|z| g.row(z));
    let h = g.row(h_hat);
    let logits = predictor.logits(&mut g, &bind, zv, h)?;
    let logits: Vec<T> = g.value(logits).iter().copied().collect();
    let probs = softmax(&logits)?;
    Ok(ActionPrediction { logits, probs })
}

/// Masked mean of `−ln max(p[a], 1e-12)`; `probs` is `rows×A`, `mask` `rows×1`.
pub fn ce_loss<T: Real>(g: &mut Graph<'_, T>, probs: Var, true_actions: &[usize], mask: &Array2<T>) -> Result<Var> {
    let picked = g.gather_cols(probs, true_actions.to_vec())?;
    let floored = g.clamp_min(picked, real(LOG_FLOOR));
    let ln = g.ln(floored);
    let nll = g.neg(ln);
    g.masked_mean(nll, mask)
}

/// Weights of the portrait objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelLambdas {
    pub mi: f64,
    pub cn: f64,
    pub ce: f64,
}

impl Default for ModelLambdas {
    fn default() -> Self {
        ModelLambdas { mi: 0.1, cn: 0.01, ce: 1.0 }
    }
}

pub fn model_loss(mi: f64, cn: f64, ce: f64, lambdas: &ModelLambdas) -> f64 {
    lambdas.mi * mi + lambdas.cn * cn + lambdas.ce * ce
}

/// Graph form of [`model_loss`].
pub fn model_loss_graph<T: Real>(g: &mut Graph<'_, T>, mi: Var, cn: Var, ce: Var, lambdas: &ModelLambdas) -> Result<Var> {
    let a = g.scale(mi, real(lambdas.mi));
    let b = g.scale(cn, real(lambdas.cn));
    let c = g.scale(ce, real(lambdas.ce));
    let ab = g.add(a, b)?;
    g.add(ab, c)
}
