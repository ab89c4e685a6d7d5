//! Probability helpers in two forms: plain slice functions and their
//! differentiable counterparts on a [`Graph`].

use ndarray::Array2;

use super::graph::{Graph, Var};
use super::Real;
use crate::error::{ensure, Result};

/// Numerically stable softmax of a vector.
pub fn softmax<T: Real>(x: &[T]) -> Result<Vec<T>> {
    ensure!(!x.is_empty(), Contract, "softmax of an empty vector");
    ensure!(x.iter().all(|v| !v.is_nan()), Numeric, "softmax input contains NaN");
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let z = exps.iter().fold(T::zero(), |a, &b| a + b);
    Ok(exps.into_iter().map(|e| e / z).collect())
}

fn check_deltas<T: Real>(delta: &[T]) -> Result<()> {
    ensure!(
        delta.iter().all(|&d| d > T::zero()),
        Numeric,
        "standard deviations must be strictly positive"
    );
    Ok(())
}

/// Reparameterized draw `mu + delta * noise`.
pub fn gaussian_sample<T: Real>(mu: &[T], delta: &[T], noise: &[T]) -> Result<Vec<T>> {
    ensure!(mu.len() == delta.len() && mu.len() == noise.len(), Contract, "gaussian_sample: length mismatch");
    check_deltas(delta)?;
    Ok(mu.iter().zip(delta).zip(noise).map(|((&m, &d), &n)| m + d * n).collect())
}

/// Closed-form `KL(N(mu1, diag delta1²) ‖ N(mu2, diag delta2²))`.
pub fn kl_diag_gaussians<T: Real>(mu1: &[T], delta1: &[T], mu2: &[T], delta2: &[T]) -> Result<T> {
    let n = mu1.len();
    ensure!(delta1.len() == n && mu2.len() == n && delta2.len() == n, Contract, "kl: length mismatch");
    check_deltas(delta1)?;
    check_deltas(delta2)?;
    let half = T::from_f64(0.5).expect("0.5");
    let mut kl = T::zero();
    for i in 0..n {
        let dm = mu1[i] - mu2[i];
        kl = kl + (delta2[i] / delta1[i]).ln()
            + (delta1[i] * delta1[i] + dm * dm) / (delta2[i] * delta2[i] + delta2[i] * delta2[i])
            - half;
    }
    // Rounding can push an exactly-zero divergence a hair below zero.
    Ok(kl.max(T::zero()))
}

/// Graph form of [`gaussian_sample`] over `m×L` rows; `noise` is a constant.
pub fn gaussian_sample_graph<T: Real>(g: &mut Graph<'_, T>, mu: Var, delta: Var, noise: Array2<T>) -> Result<Var> {
    ensure!(g.value(delta).iter().all(|&d| d > T::zero()), Numeric, "nonpositive standard deviation");
    let n = g.constant(noise);
    let spread = g.mul(delta, n)?;
    g.add(mu, spread)
}

/// Row-wise KL between diagonal Gaussians: `m×L` inputs, `m×1` output.
pub fn kl_diag_gaussians_graph<T: Real>(g: &mut Graph<'_, T>, mu1: Var, delta1: Var, mu2: Var, delta2: Var) -> Result<Var> {
    ensure!(
        g.value(delta1).iter().chain(g.value(delta2).iter()).all(|&d| d > T::zero()),
        Numeric,
        "nonpositive standard deviation"
    );
    let ln2 = g.ln(delta2);
    let ln1 = g.ln(delta1);
    let log_ratio = g.sub(ln2, ln1)?;
    let dm = g.sub(mu1, mu2)?;
    let dm2 = g.square(dm);
    let v1 = g.square(delta1);
    let num = g.add(v1, dm2)?;
    let v2 = g.square(delta2);
    let den = g.scale(v2, T::from_f64(2.0).expect("2"));
    let ratio = g.div(num, den)?;
    let per_dim = g.add(log_ratio, ratio)?;
    let per_dim = g.add_scalar(per_dim, T::from_f64(-0.5).expect("-0.5"));
    Ok(g.sum_cols(per_dim))
}

/// Row-wise cosine similarity `a·b / (‖a‖‖b‖ + eps)`: `m×L` inputs, `m×1` output.
pub fn cosine_rows<T: Real>(g: &mut Graph<'_, T>, a: Var, b: Var, eps: T) -> Result<Var> {
    let ab = g.mul(a, b)?;
    let dot = g.sum_cols(ab);
    let aa = g.square(a);
    let na2 = g.sum_cols(aa);
    let bb = g.square(b);
    let nb2 = g.sum_cols(bb);
    let prod = g.mul(na2, nb2)?;
    let norms = g.sqrt(prod);
    let denom = g.add_scalar(norms, eps);
    g.div(dot, denom)
}

/// `idx.len()×width` matrix with a single one per row.
pub fn one_hot_rows<T: Real>(idx: &[usize], width: usize) -> Result<Array2<T>> {
    ensure!(idx.iter().all(|&i| i < width), Contract, "one-hot index out of 0..{width}");
    let mut out = Array2::zeros((idx.len(), width));
    for (r, &i) in idx.iter().enumerate() {
        out[[r, i]] = T::one();
    }
    Ok(out)
}

/// Softplus with a positive floor, the standard-deviation head.
pub fn positive_std<T: Real>(g: &mut Graph<'_, T>, pre: Var, floor: T) -> Var {
    let sp = g.softplus(pre);
    g.add_scalar(sp, floor)
}
