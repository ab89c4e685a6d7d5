//! Dense layers, MLPs, the GRU cell and scaled dot-product attention.

use rand::Rng;

use super::graph::{Binding, Graph, Var};
use super::params::{ParamId, ParamSet};
use super::Real;
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply<T: Real>(self, g: &mut Graph<'_, T>, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Affine map `x·W + b` followed by an activation.
#[derive(Clone, Debug)]
pub struct Dense {
    weight: ParamId,
    bias: ParamId,
    input: usize,
    output: usize,
    activation: Activation,
}

impl Dense {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = params.add_uniform(format!("{name}.weight"), input, output, input, rng);
        let bias = params.add_uniform(format!("{name}.bias"), 1, output, input, rng);
        Dense {
            weight,
            bias,
            input,
            output,
            activation,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    /// Zeroes both weight and bias, making the layer output `act(0)`.
    pub fn zero<T: Real>(&self, params: &mut ParamSet<T>) {
        params.get_mut(self.weight).fill(T::zero());
        params.get_mut(self.bias).fill(T::zero());
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, x: Var) -> Result<Var> {
        let cols = g.value(x).ncols();
        ensure!(cols == self.input, Config, "dense: input width {cols}, layer expects {}", self.input);
        let xw = g.matmul(x, bind.var(self.weight))?;
        let y = g.add_row(xw, bind.var(self.bias))?;
        Ok(self.activation.apply(g, y))
    }
}

/// Stack of dense layers; ReLU between layers, configurable output activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        sizes: &[usize],
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { Activation::Relu };
                Dense::new(params, &format!("{name}.{i}"), w[0], w[1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn last(&self) -> &Dense {
        self.layers.last().expect("nonempty")
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(g, bind, x)?;
        }
        Ok(x)
    }
}

/// Gated recurrent unit with reset, update and candidate gates laid out as
/// `[r | z | n]` blocks in the packed weight matrices.
///
/// `h' = (1 - z) * n + z * h`, so a saturated update gate carries the
/// previous state through unchanged.
#[derive(Clone, Debug)]
pub struct GruCell {
    w_input: ParamId,
    w_hidden: ParamId,
    b_input: ParamId,
    b_hidden: ParamId,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        GruCell {
            w_input: params.add_uniform(format!("{name}.w_input"), input, 3 * hidden, hidden, rng),
            w_hidden: params.add_uniform(format!("{name}.w_hidden"), hidden, 3 * hidden, hidden, rng),
            b_input: params.add_uniform(format!("{name}.b_input"), 1, 3 * hidden, hidden, rng),
            b_hidden: params.add_uniform(format!("{name}.b_hidden"), 1, 3 * hidden, hidden, rng),
            input,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w_input, self.w_hidden, self.b_input, self.b_hidden]
    }

    /// Bias columns of the update gate in the packed input bias.
    pub fn update_gate_bias(&self) -> (ParamId, std::ops::Range<usize>) {
        (self.b_input, self.hidden..2 * self.hidden)
    }

    /// One recurrent step over a batch of rows: `x` is `m×input`, `h` is
    /// `m×hidden`.
    pub fn step<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, x: Var, h: Var) -> Result<Var> {
        let (m, xi) = g.value(x).dim();
        let (mh, hd) = g.value(h).dim();
        ensure!(xi == self.input, Config, "gru: input width {xi}, expected {}", self.input);
        ensure!(hd == self.hidden && mh == m, Config, "gru: hidden {mh}x{hd}, expected {m}x{}", self.hidden);
        let hdim = self.hidden;
        let xw = g.matmul(x, bind.var(self.w_input))?;
        let gi = g.add_row(xw, bind.var(self.b_input))?;
        let hw = g.matmul(h, bind.var(self.w_hidden))?;
        let gh = g.add_row(hw, bind.var(self.b_hidden))?;

        let gi_rz = g.slice_cols(gi, 0, 2 * hdim)?;
        let gh_rz = g.slice_cols(gh, 0, 2 * hdim)?;
        let rz_pre = g.add(gi_rz, gh_rz)?;
        let rz = g.sigmoid(rz_pre);
        let r = g.slice_cols(rz, 0, hdim)?;
        let z = g.slice_cols(rz, hdim, 2 * hdim)?;

        let gi_n = g.slice_cols(gi, 2 * hdim, 3 * hdim)?;
        let gh_n = g.slice_cols(gh, 2 * hdim, 3 * hdim)?;
        let gated = g.mul(r, gh_n)?;
        let n_pre = g.add(gi_n, gated)?;
        let n = g.tanh(n_pre);

        let diff = g.sub(h, n)?;
        let carried = g.mul(z, diff)?;
        g.add(n, carried)
    }
}

/// Scaled dot-product attention with learned query and key projections.
/// Values are fused as given, without a value projection.
#[derive(Clone, Debug)]
pub struct Attention {
    w_query: ParamId,
    w_key: ParamId,
    query_dim: usize,
    key_dim: usize,
    d_key: usize,
}

/// Output of [`Attention::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `rows×value_dim` fused values.
    pub output: Var,
    /// `rows×k` attention weights.
    pub weights: Var,
}

impl Attention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        query_dim: usize,
        key_dim: usize,
        d_key: usize,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(d_key > 0, Config, "attention: d_key must be positive");
        Ok(Attention {
            w_query: params.add_uniform(format!("{name}.w_query"), query_dim, d_key, query_dim, rng),
            w_key: params.add_uniform(format!("{name}.w_key"), key_dim, d_key, key_dim, rng),
            query_dim,
            key_dim,
            d_key,
        })
    }

    pub fn query_weight(&self) -> ParamId {
        self.w_query
    }

    pub fn key_weight(&self) -> ParamId {
        self.w_key
    }

    pub fn d_key(&self) -> usize {
        self.d_key
    }

    /// `query` is `rows×query_dim`; `keys` and `values` hold `k` consecutive
    /// rows per query row (`rows·k` rows in total).
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        bind: &Binding,
        query: Var,
        keys: Var,
        values: Var,
        k: usize,
    ) -> Result<Attended> {
        ensure!(k >= 1, Contract, "attention over an empty key set");
        let (rows, qd) = g.value(query).dim();
        let (krows, kd) = g.value(keys).dim();
        let vrows = g.value(values).nrows();
        ensure!(qd == self.query_dim && kd == self.key_dim, Config, "attention: input widths");
        ensure!(krows == rows * k && vrows == rows * k, Contract, "attention: keys/values must have {k} rows per query");

        let q = g.matmul(query, bind.var(self.w_query))?;
        let kp = g.matmul(keys, bind.var(self.w_key))?;
        let owner: Vec<usize> = (0..rows).flat_map(|r| std::iter::repeat_n(r, k)).collect();
        let q_rep = g.select_rows(q, owner.clone())?;
        let prod = g.mul(q_rep, kp)?;
        let dots = g.sum_cols(prod);
        let scale = T::one() / T::from_usize(self.d_key).expect("d_key").sqrt();
        let scores = g.scale(dots, scale);
        let scores = g.reshape(scores, rows, k)?;
        let weights = g.softmax_rows(scores);
        let wcol = g.reshape(weights, rows * k, 1)?;
        let weighted = g.mul_col(values, wcol)?;
        let output = g.segment_sum(weighted, owner, rows)?;
        Ok(Attended { output, weights })
    }

    /// Single-query convenience form: returns the fused value and the weight
    /// of each key.
    pub fn attend<T: Real>(
        &self,
        params: &ParamSet<T>,
        query: &[T],
        keys: &[Vec<T>],
        values: &[Vec<T>],
    ) -> Result<(Vec<T>, Vec<T>)> {
        ensure!(!keys.is_empty(), Contract, "attention over an empty key set");
        ensure!(keys.len() == values.len(), Contract, "attention: {} keys, {} values", keys.len(), values.len());
        let mut g = Graph::new();
        let bind = g.bind_frozen(params);
        let q = g.row(query);
        let kk = stack_rows(&mut g, keys)?;
        let vv = stack_rows(&mut g, values)?;
        let att = self.forward(&mut g, &bind, q, kk, vv, keys.len())?;
        Ok((g.value(att.output).iter().copied().collect(), g.value(att.weights).iter().copied().collect()))
    }
}

fn stack_rows<T: Real>(g: &mut Graph<'_, T>, rows: &[Vec<T>]) -> Result<Var> {
    let width = rows[0].len();
    ensure!(rows.iter().all(|r| r.len() == width), Config, "ragged rows");
    let data: Vec<T> = rows.iter().flatten().copied().collect();
    Ok(g.constant(ndarray::Array2::from_shape_vec((rows.len(), width), data).expect("shape")))
}
