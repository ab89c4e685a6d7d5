//! The dual filter: score every perception portrait for accuracy, keep the
//! top-k teammates per agent, then fuse their belief portraits with
//! relevance attention keyed on the agent's own trajectory.
//!
//! Scores form the evaluation matrix `C` (row `i`: agent `i`'s view of every
//! agent, softmax over the row). Two regularizers shape it during centralized
//! training: a symmetry term (`i` and `j` see the same intersection from two
//! sides) and a diagonal term (a self-portrait is always exact). At execution
//! an agent only ever computes its own row.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{real, Activation, Attended, Attention, Binding, Graph, Mlp, ParamSet, Real, Var};
use crate::error::{ensure, Result};

/// The accuracy scorer `f`: a two-layer MLP from a portrait encoding to one
/// score, shared across all pairs.
#[derive(Clone, Debug)]
pub struct AccuracyScorer {
    mlp: Mlp,
}

impl AccuracyScorer {
    pub fn new<T: Real, R: Rng + ?Sized>(params: &mut ParamSet<T>, input: usize, hidden: usize, rng: &mut R) -> Self {
        AccuracyScorer {
            mlp: Mlp::new(params, "filter.score", &[input, hidden, 1], Activation::Linear, rng),
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// `h_hat` holds `m·n` rows ordered `(matrix, i, j)`; returns `C` as an
    /// `(m·n)×n` variable whose row `(matrix, i)` is softmax over `j`.
    pub fn evaluate<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, h_hat: Var, n: usize) -> Result<Var> {
        let rows = g.value(h_hat).nrows();
        ensure!(n > 0 && rows.is_multiple_of(n), Contract, "scorer: {rows} rows for n = {n}");
        let s = self.mlp.forward(g, bind, h_hat)?;
        let s = g.reshape(s, rows / n, n)?;
        Ok(g.softmax_rows(s))
    }

    /// Raw score `f(ĥ)` of one portrait.
    pub fn score<T: Real>(&self, params: &ParamSet<T>, h_hat: &[T]) -> Result<T> {
        let mut g = Graph::new();
        let bind = g.bind_frozen(params);
        let x = g.row(h_hat);
        let s = self.mlp.forward(&mut g, &bind, x)?;
        Ok(g.scalar_value(s))
    }
}

/// Row-stochastic `N×N` accuracy scores at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationMatrix<T> {
    pub scores: Array2<T>,
}

impl<T: Real> EvaluationMatrix<T> {
    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        self.scores.row(i).to_vec()
    }

    pub fn diagonal_mean(&self) -> T {
        self.scores.diag().mean().unwrap_or(T::zero())
    }

    /// Mean over `i ≠ j`; zero for `N = 1`.
    pub fn off_diagonal_mean(&self) -> T {
        let n = self.n();
        if n < 2 {
            return T::zero();
        }
        let off = self.scores.sum() - self.scores.diag().sum();
        off / T::from_usize(n * (n - 1)).expect("count")
    }
}

/// `C` from an `N×N` grid of portrait encodings (`h_hat[i][j] = ĥ_ij`).
pub fn evaluate_portraits<T: Real>(
    scorer: &AccuracyScorer,
    params: &ParamSet<T>,
    h_hat: &[Vec<Vec<T>>],
) -> Result<EvaluationMatrix<T>> {
    let n = h_hat.len();
    ensure!(n > 0 && h_hat.iter().all(|r| r.len() == n), Contract, "evaluate_portraits: grid must be N×N");
    let rows: Vec<&Vec<T>> = h_hat.iter().flatten().collect();
    let width = rows[0].len();
    ensure!(rows.iter().all(|r| r.len() == width), Config, "evaluate_portraits: ragged encodings");
    let data: Vec<T> = rows.into_iter().flatten().copied().collect();
    let mut g = Graph::new();
    let bind = g.bind_frozen(params);
    let x = g.constant(Array2::from_shape_vec((n * n, width), data).expect("shape"));
    let c = scorer.evaluate(&mut g, &bind, x, n)?;
    Ok(EvaluationMatrix {
        scores: g.value(c).clone(),
    })
}

/// `‖C − Cᵀ‖_F`.
pub fn symmetry_loss<T: Real>(c: &Array2<T>) -> T {
    let d = c - &c.t();
    d.mapv(|x| x * x).sum().sqrt()
}

/// `−trace(C)`.
pub fn self_loss<T: Real>(c: &Array2<T>) -> T {
    -c.diag().sum()
}

/// Graph form of [`symmetry_loss`] for `m` stacked matrices (`C` is
/// `(m·n)×n`); returns `m×1`.
pub fn symmetry_loss_graph<T: Real>(g: &mut Graph<'_, T>, c: Var, n: usize) -> Result<Var> {
    let rows = g.value(c).nrows();
    ensure!(rows.is_multiple_of(n) && g.value(c).ncols() == n, Contract, "symmetry_loss: expected stacked {n}×{n} blocks");
    let m = rows / n;
    let flat = g.reshape(c, m, n * n)?;
    // Transposing each block permutes the flattened columns (i, j) → (j, i).
    let cols = g.transpose(flat);
    let perm: Vec<usize> = (0..n * n).map(|k| (k % n) * n + k / n).collect();
    let permuted = g.select_rows(cols, perm)?;
    let flat_t = g.transpose(permuted);
    let diff = g.sub(flat, flat_t)?;
    let sq = g.square(diff);
    let sum = g.sum_cols(sq);
    Ok(g.sqrt(sum))
}

/// Graph form of [`self_loss`] for `m` stacked matrices; returns `m×1`.
pub fn self_loss_graph<T: Real>(g: &mut Graph<'_, T>, c: Var, n: usize) -> Result<Var> {
    let rows = g.value(c).nrows();
    ensure!(rows.is_multiple_of(n) && g.value(c).ncols() == n, Contract, "self_loss: expected stacked {n}×{n} blocks");
    let diag = g.gather_cols(c, (0..rows).map(|r| r % n).collect())?;
    let diag = g.reshape(diag, rows / n, n)?;
    let trace = g.sum_cols(diag);
    Ok(g.neg(trace))
}

/// The `k` teammates `j ≠ agent` with the highest scores; ties go to the
/// lower index.
pub fn select_topk<T: Real>(row: &[T], agent: usize, k: usize) -> Result<Vec<usize>> {
    let n = row.len();
    ensure!(agent < n, Contract, "select_topk: agent {agent} outside row of {n}");
    ensure!(k >= 1 && k < n, Config, "top-k requires 1 ≤ k ≤ N−1 (k = {k}, N = {n})");
    let mut candidates: Vec<usize> = (0..n).filter(|&j| j != agent).collect();
    // Stable sort keeps ascending index order among equal scores.
    candidates.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal));
    candidates.truncate(k);
    Ok(candidates)
}

/// Stochastic alternative: draws `k` distinct teammates without replacement,
/// each draw proportional to the remaining scores.
pub fn sample_topk<T: Real, R: Rng + ?Sized>(row: &[T], agent: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = row.len();
    ensure!(agent < n, Contract, "sample_topk: agent {agent} outside row of {n}");
    ensure!(k >= 1 && k < n, Config, "top-k requires 1 ≤ k ≤ N−1 (k = {k}, N = {n})");
    let mut pool: Vec<usize> = (0..n).filter(|&j| j != agent).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let weights: Vec<f64> = pool.iter().map(|&j| row[j].to_f64().unwrap_or(0.0).max(0.0)).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = pool.len() - 1;
            for (p, w) in weights.iter().enumerate() {
                if u < *w {
                    idx = p;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            0
        };
        out.push(pool.remove(pick));
    }
    Ok(out)
}

/// Relevance attention: query from `h_i`, keys from the selected `ĥ_ij`,
/// values the selected belief latents.
#[derive(Clone, Debug)]
pub struct BeliefFusion {
    attention: Attention,
}

impl BeliefFusion {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        query_dim: usize,
        key_dim: usize,
        d_key: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(BeliefFusion {
            attention: Attention::new(params, "filter.fusion", query_dim, key_dim, d_key, rng)?,
        })
    }

    pub fn attention(&self) -> &Attention {
        &self.attention
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        bind: &Binding,
        h: Var,
        keys: Var,
        values: Var,
        k: usize,
    ) -> Result<Attended> {
        self.attention.forward(g, bind, h, keys, values, k)
    }
}

/// Fused belief `e_i` and the attention weights over the selection.
pub fn fuse_beliefs<T: Real>(
    fusion: &BeliefFusion,
    params: &ParamSet<T>,
    h_i: &[T],
    selected_h_hat: &[Vec<T>],
    selected_z: &[Vec<T>],
) -> Result<(Vec<T>, Vec<T>)> {
    ensure!(!selected_h_hat.is_empty(), Contract, "fuse_beliefs: empty selection");
    fusion.attention.attend(params, h_i, selected_h_hat, selected_z)
}

/// Weights of the filter regularizers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterLambdas {
    pub sy: f64,
    pub se: f64,
}

impl Default for FilterLambdas {
    fn default() -> Self {
        FilterLambdas { sy: 0.01, se: 0.01 }
    }
}

pub fn df_loss(sy: f64, se: f64, lambdas: &FilterLambdas) -> f64 {
    lambdas.sy * sy + lambdas.se * se
}

pub fn df_loss_graph<T: Real>(g: &mut Graph<'_, T>, sy: Var, se: Var, lambdas: &FilterLambdas) -> Result<Var> {
    let a = g.scale(sy, real(lambdas.sy));
    let b = g.scale(se, real(lambdas.se));
    g.add(a, b)
}
