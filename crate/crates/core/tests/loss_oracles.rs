mod common;

use common::checks::{loss_errors, reduction_mismatches, Instance};
use common::{refs, rng, softmax, units};
use lps_core::losses::{rkd_loss, rkd_plus_loss, similarity_distribution};
use proptest::prelude::*;

#[test]
fn loss_values_match_term_by_term_oracles() {
    for (loss, value, _) in loss_errors(40, 11) {
        assert!(value < 1e-10, "{loss}: relative error {value:e}");
    }
}

#[test]
fn loss_gradients_match_central_differences() {
    for (loss, _, grad) in loss_errors(25, 12) {
        assert!(grad < 1e-4, "{loss}: gradient relative error {grad:e}");
    }
}

#[test]
fn empty_hard_set_reduces_bit_for_bit() {
    assert_eq!(reduction_mismatches(100, 13), 0);
}

#[test]
fn softmax_of_two_similarities() {
    let x = [1.0, 0.0];
    let a = [0.9, (1.0f64 - 0.81).sqrt()];
    let b = [0.1, (1.0f64 - 0.01).sqrt()];
    let d = similarity_distribution(&x, &[&a, &b], 0.3).unwrap();
    let oracle = softmax(&x, &[a.to_vec(), b.to_vec()], 0.3);
    let expected = 1.0 / (1.0 + (-0.8f64 / 0.3).exp());
    assert!((d.probs[0] - expected).abs() < 1e-14);
    assert!((d.probs[0] - oracle[0]).abs() < 1e-14);
    assert!((d.probs[0] - 0.935).abs() < 5e-4);
}

#[test]
fn distillation_vanishes_for_identical_features() {
    let mut r = rng(14);
    for _ in 0..50 {
        let inst = Instance::random(&mut r);
        let o = refs(&inst.old);
        let p = refs(&inst.protos);
        assert!(rkd_loss(&o, &o, &p, 0.3).unwrap().value.abs() < 1e-9);
        assert!(rkd_plus_loss(&o, &o, &p, &refs(&inst.hard), 0.3).unwrap().value.abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn distillation_is_nonnegative(seed in 0u64..10_000, tau in 0.05f64..2.0) {
        let mut r = rng(seed);
        let inst = Instance::random(&mut r);
        let l = rkd_plus_loss(&refs(&inst.old), &refs(&inst.new), &refs(&inst.protos), &refs(&inst.hard), tau).unwrap();
        prop_assert!(l.value >= -1e-15);
    }

    #[test]
    fn softmax_follows_reference_permutation(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let refs_v = units(&mut r, 4, 5);
        let x = units(&mut r, 1, 5).remove(0);
        let d = similarity_distribution(&x, &refs(&refs_v), 0.3).unwrap();
        let mut rev = refs_v.clone();
        rev.reverse();
        let e = similarity_distribution(&x, &refs(&rev), 0.3).unwrap();
        for k in 0..4 {
            prop_assert!((d.probs[k] - e.probs[3 - k]).abs() < 1e-15);
        }
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn higher_temperature_flattens(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let refs_v = units(&mut r, 3, 5);
        let x = units(&mut r, 1, 5).remove(0);
        let cold = similarity_distribution(&x, &refs(&refs_v), 0.1).unwrap();
        let hot = similarity_distribution(&x, &refs(&refs_v), 1.0).unwrap();
        let max = |p: &[f64]| p.iter().copied().fold(0.0, f64::max);
        prop_assert!(max(&hot.probs) <= max(&cold.probs) + 1e-15);
    }
}
