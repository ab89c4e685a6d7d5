mod common;

use aim_core::trainer::Ablations;
use common::gradcheck::check;

#[test]
fn full_model_gradients_over_five_seeds() {
    for seed in 0..5 {
        check(seed, Ablations::default());
    }
}

#[test]
fn ablated_model_gradients() {
    check(5, Ablations { no_belief: true, ..Ablations::default() });
    check(6, Ablations { belief_from_teammate_perspective: true, ..Ablations::default() });
    check(7, Ablations::all());
}
