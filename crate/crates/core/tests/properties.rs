use aim_core::diffcore::{kl_diag_gaussians, softmax, Attention, Graph, ParamSet};
use aim_core::dual_filter::{select_topk, AccuracyScorer};
use aim_core::envkit::{observe, observe_all, EnvConfig, ObsLayout, WorldState};
use aim_core::perception::{batch_portraits, viewpoint_transform};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn world_config() -> impl Strategy<Value = EnvConfig> {
    (4usize..9, 2usize..6, 0usize..4, 1usize..4).prop_map(|(g, n, p, r)| EnvConfig {
        grid_size: g,
        n_agents: n,
        n_prey: p,
        sight_radius: r,
        ..EnvConfig::default()
    })
}

fn world() -> impl Strategy<Value = (EnvConfig, WorldState)> {
    (world_config(), any::<u64>()).prop_map(|(c, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = WorldState::random(&c, &mut rng);
        // Some prey already caught.
        for p in s.prey_range(&c) {
            if seed.rotate_left(p as u32) & 1 == 1 {
                s.alive[p] = false;
            }
        }
        (c, s)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn visibility_is_exactly_the_sight_square((c, s) in world()) {
        for i in 0..c.n_agents {
            let o = observe(&c, &s, i);
            prop_assert_eq!(o.position, Some([s.positions[i].x, s.positions[i].y]));
            for (e, slot) in o.slots.iter().enumerate() {
                let d = s.positions[i].chebyshev(s.positions[e]);
                prop_assert_eq!(slot.visible, s.alive[e] && d <= c.sight_radius as i32);
                if slot.visible {
                    prop_assert_eq!(slot.rel, [s.positions[e].x - s.positions[i].x, s.positions[e].y - s.positions[i].y]);
                    prop_assert_eq!(slot.kind, Some(s.kinds[e]));
                } else {
                    prop_assert_eq!(slot.rel, [0, 0]);
                }
            }
        }
    }

    #[test]
    fn portraits_are_exact_on_the_intersection((c, s) in world()) {
        let layout = ObsLayout::new(&c);
        let obs = observe_all(&c, &s);
        let grid = batch_portraits(&layout, &obs).unwrap();
        for i in 0..c.n_agents {
            prop_assert_eq!(&grid[i][i], &obs[i]);
            for j in 0..c.n_agents {
                let p = &grid[i][j];
                if !obs[i].slots[j].visible {
                    prop_assert!(p.is_unseen());
                    continue;
                }
                prop_assert_eq!(p.position, obs[j].position);
                for (e, slot) in p.slots.iter().enumerate() {
                    let both = obs[i].slots[e].visible && obs[j].slots[e].visible;
                    prop_assert_eq!(slot.visible, both);
                    if slot.visible {
                        prop_assert_eq!(slot, &obs[j].slots[e]);
                    }
                }
            }
        }
    }

    #[test]
    fn intersections_are_symmetric((c, s) in world()) {
        let layout = ObsLayout::new(&c);
        let obs = observe_all(&c, &s);
        for i in 0..c.n_agents {
            for j in 0..c.n_agents {
                let a = viewpoint_transform(&layout, &obs[i], i, j).unwrap();
                let b = viewpoint_transform(&layout, &obs[j], j, i).unwrap();
                prop_assert_eq!(a.is_unseen(), b.is_unseen());
                let va: Vec<bool> = a.slots.iter().map(|x| x.visible).collect();
                let vb: Vec<bool> = b.slots.iter().map(|x| x.visible).collect();
                prop_assert_eq!(va, vb);
            }
        }
    }
}

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, len)
}

proptest! {
    #[test]
    fn softmax_is_a_shift_invariant_distribution(x in finite_vec(1..12), shift in -50.0f64..50.0) {
        let p = softmax(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal_arguments(
        mu1 in finite_vec(4..5), mu2 in finite_vec(4..5),
        d1 in prop::collection::vec(0.05f64..5.0, 4), d2 in prop::collection::vec(0.05f64..5.0, 4),
    ) {
        prop_assert!(kl_diag_gaussians(&mu1, &d1, &mu2, &d2).unwrap() >= 0.0);
        prop_assert!(kl_diag_gaussians(&mu1, &d1, &mu1, &d1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn attention_is_permutation_equivariant(seed in any::<u64>(), k in 1usize..6, perm_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::<f64>::new();
        let att = Attention::new(&mut p, "att", 3, 4, 5, &mut rng).unwrap();
        let q: Vec<f64> = (0..3).map(|i| (seed.rotate_left(i) % 97) as f64 / 50.0 - 1.0).collect();
        let keys: Vec<Vec<f64>> = (0..k).map(|a| (0..4).map(|b| ((a * 7 + b * 3) as f64).sin()).collect()).collect();
        let values: Vec<Vec<f64>> = (0..k).map(|a| (0..2).map(|b| ((a * 5 + b) as f64).cos()).collect()).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut prng);
        let pk: Vec<Vec<f64>> = perm.iter().map(|&i| keys[i].clone()).collect();
        let pv: Vec<Vec<f64>> = perm.iter().map(|&i| values[i].clone()).collect();
        let (out, w) = att.attend(&p, &q, &keys, &values).unwrap();
        let (pout, pw) = att.attend(&p, &q, &pk, &pv).unwrap();
        for (a, b) in out.iter().zip(&pout) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (slot, &i) in perm.iter().enumerate() {
            prop_assert!((pw[slot] - w[i]).abs() < 1e-12);
        }
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_matrix_rows_are_stochastic(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::<f64>::new();
        let scorer = AccuracyScorer::new(&mut p, 5, 6, &mut rng);
        let x = Array2::from_shape_fn((2 * n * n, 5), |(r, c)| (((r * 31 + c * 17) as u64 ^ seed) % 1000) as f64 / 100.0 - 5.0);
        let mut g = Graph::new();
        let bind = g.bind_frozen(&p);
        let xv = g.constant(x);
        let c = scorer.evaluate(&mut g, &bind, xv, n).unwrap();
        for row in g.value(c).rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn topk_is_invariant_under_increasing_maps(row in finite_vec(2..9), agent_pick in any::<usize>(), k_pick in any::<usize>()) {
        let n = row.len();
        let agent = agent_pick % n;
        let k = 1 + k_pick % (n - 1);
        let base = select_topk(&row, agent, k).unwrap();
        let mapped: Vec<f64> = row.iter().map(|v| (v / 7.0).exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(&select_topk(&mapped, agent, k).unwrap(), &base);
        prop_assert!(!base.contains(&agent));
        prop_assert_eq!(base.len(), k);
        let worst_kept = base.iter().map(|&j| row[j]).fold(f64::INFINITY, f64::min);
        for j in (0..n).filter(|j| *j != agent && !base.contains(j)) {
            prop_assert!(row[j] <= worst_kept);
        }
    }
}
