//! Central finite differences against the tape, in f64, for every loss term
//! and every parameter of a model.

use aim_core::diffcore::{Graph, ParamSet};
use aim_core::envkit::EpisodeBatch;
use aim_core::trainer::{Ablations, Learner, LossVars};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
const NAMES: [&str; 9] = ["td", "mi", "cn", "ce", "sy", "se", "md", "df", "total"];

fn pick(l: &LossVars) -> [aim_core::diffcore::Var; 9] {
    [l.td, l.mi, l.cn, l.ce, l.sy, l.se, l.md, l.df, l.total]
}

struct Problem {
    learner: Learner<f64>,
    batch: EpisodeBatch,
    target_next: Array2<f64>,
}

impl Problem {
    fn new(seed: u64, ablation: Ablations) -> Self {
        let mut config = super::tiny_config(seed, ablation);
        // Non-trivial weights on every term.
        config.lambdas.mi = 0.3;
        config.lambdas.cn = 0.2;
        config.lambdas.sy = 0.5;
        config.lambdas.se = 0.4;
        let learner = Learner::<f64>::new(config).unwrap();
        let eps = super::episodes(&learner, 2, seed);
        let batch = super::batch_of(&eps);
        let target_next = learner.model.target_next_values(&learner.target, &batch).unwrap();
        Problem {
            learner,
            batch,
            target_next,
        }
    }

    /// Loss values and, optionally, the gradient of each wrt every parameter.
    fn eval(&self, params: &ParamSet<f64>, grads: bool) -> ([f64; 9], Vec<Vec<Array2<f64>>>) {
        let m = &self.learner.model;
        let c = &self.learner.config;
        let mut g = Graph::new();
        let bind = g.bind(params);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let un = m.unroll(&mut g, &bind, &self.batch, self.batch.max_len, Some(&mut rng)).unwrap();
        let l = m.losses(&mut g, &bind, &self.batch, &un, &self.target_next, c.gamma, &c.lambdas).unwrap();
        let vars = pick(&l);
        let values = vars.map(|v| g.scalar_value(v));
        let gs = if grads {
            vars.iter().map(|&v| g.backward(v).unwrap().for_binding(&g, &bind)).collect()
        } else {
            Vec::new()
        };
        (values, gs)
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

/// Panics on the first element whose relative error reaches `TOL`; returns
/// the worst error seen per loss.
pub fn check(seed: u64, ablation: Ablations) -> [f64; 9] {
    let p = Problem::new(seed, ablation);
    let base = p.learner.params.clone();
    let (values, analytic) = p.eval(&base, true);
    assert!(values.iter().all(|v| v.is_finite()), "{values:?}");
    let mut worst = [0.0f64; 9];
    let mut probe = base.clone();
    for (pi, param) in base.iter().enumerate() {
        for idx in 0..param.value().len() {
            let (r, c) = (idx / param.value().ncols(), idx % param.value().ncols());
            let orig = param.value()[[r, c]];
            let set = |probe: &mut ParamSet<f64>, v: f64| probe.values_mut().nth(pi).unwrap()[[r, c]] = v;
            set(&mut probe, orig + STEP);
            let (up, _) = p.eval(&probe, false);
            set(&mut probe, orig - STEP);
            let (down, _) = p.eval(&probe, false);
            set(&mut probe, orig);
            for k in 0..9 {
                let numeric = (up[k] - down[k]) / (2.0 * STEP);
                let a = analytic[k][pi][[r, c]];
                let e = rel_err(a, numeric);
                assert!(
                    e < TOL,
                    "seed {seed} {ablation:?}: d{}/d{}[{r},{c}] analytic {a:e} numeric {numeric:e} rel {e:e}",
                    NAMES[k],
                    param.name()
                );
                worst[k] = worst[k].max(e);
            }
        }
    }
    println!("seed {seed} {}: worst relative errors {:?}", ablation.label(), NAMES.iter().zip(worst).collect::<Vec<_>>());
    worst
}
