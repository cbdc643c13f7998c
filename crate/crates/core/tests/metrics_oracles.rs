mod common;

use common::{brute_accuracy, pair_counting_ari, permutations, random_labels};
use dcgmm::metrics::{accuracy, ari, hungarian, nmi};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn accuracy_matches_permutation_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let k = rng.gen_range(1..=6);
        let n = rng.gen_range(1..40);
        let pred = random_labels(&mut rng, n, k);
        let kt = rng.gen_range(1..=6);
        let truth = random_labels(&mut rng, n, kt);
        assert!((accuracy(&pred, &truth).unwrap() - brute_accuracy(&pred, &truth)).abs() < 1e-15);
    }
}

#[test]
fn ari_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.gen_range(2..=12);
        let (kp, kt) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let pred = random_labels(&mut rng, n, kp);
        let truth = random_labels(&mut rng, n, kt);
        let a = ari(&pred, &truth).unwrap();
        let b = pair_counting_ari(&pred, &truth);
        assert!((a - b).abs() < 1e-12, "{pred:?} {truth:?}: {a} vs {b}");
    }
}

#[test]
fn hungarian_matches_permutations_on_6x6() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let cost: Vec<Vec<f64>> = (0..6).map(|_| (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let got = hungarian(&cost).unwrap();
        let got_cost: f64 = got.iter().enumerate().map(|(i, j)| cost[i][j.unwrap()]).sum();
        let best = permutations(6)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert!((got_cost - best).abs() < 1e-9);
        let identity: f64 = (0..6).map(|i| cost[i][i]).sum();
        assert!(got_cost <= identity + 1e-12);
    }
}

#[test]
fn constant_prediction_bounds() {
    let truth = [0, 1, 2, 0, 1, 2, 0];
    let pred = [5; 7];
    assert!(accuracy(&pred, &truth).unwrap() >= 1.0 / 3.0);
    assert_eq!(nmi(&pred, &truth).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn metrics_invariant_under_relabeling(seed in 0u64..100_000, n in 2usize..30, shift in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = random_labels(&mut rng, n, 4);
        let truth = random_labels(&mut rng, n, 3);
        let renamed: Vec<usize> = pred.iter().map(|p| (p * 7 + shift) % 11 + 20).collect();
        prop_assert_eq!(accuracy(&pred, &truth).unwrap(), accuracy(&renamed, &truth).unwrap());
        prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&renamed, &truth).unwrap()).abs() < 1e-12);
        prop_assert!((ari(&pred, &truth).unwrap() - ari(&renamed, &truth).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn self_agreement_is_perfect(seed in 0u64..100_000, n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = random_labels(&mut rng, n, 4);
        prop_assume!(pred.iter().any(|&p| p != pred[0]));
        prop_assert!((ari(&pred, &pred).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((nmi(&pred, &pred).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(accuracy(&pred, &pred).unwrap(), 1.0);
    }
}
