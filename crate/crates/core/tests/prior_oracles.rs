mod common;

use common::{linear_gaussian_model, ln_normal, penalty_double_sum, random_simplex_rows, random_weights};
use dcgmm::autodiff::Tensor;
use dcgmm::model::MixtureParams;
use dcgmm::objective::bound_gap_check;
use dcgmm::prior::{
    brute_force_conditional_posterior, brute_force_log_normalizer, brute_force_normalizer, gather_batch_weights, log_unnormalized_prior,
    pairwise_penalty, Assignment, PairwiseWeights,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn penalty_equals_double_sum_on_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..200 {
        let b = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=5);
        let p = random_simplex_rows(&mut rng, b, k);
        let w = random_weights(&mut rng, b, 0.4, 1e4);
        let wb = gather_batch_weights(&w, &(0..b).collect::<Vec<_>>()).unwrap();
        let got = pairwise_penalty(&p, &wb).unwrap();
        let want = penalty_double_sum(&p, &w);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn gathered_subset_matches_direct_lookup() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let w = random_weights(&mut rng, 20, 0.2, 5.0);
    let idx = [17, 3, 9, 0, 12];
    let wb = gather_batch_weights(&w, &idx).unwrap();
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            let expect = if i == j { 0.0 } else { w.get(i, j) };
            assert_eq!(wb.at(a, b), expect);
        }
    }
}

#[test]
fn normalizer_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let k = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=8);
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let log_pi: Vec<f64> = raw.iter().map(|r| (r / s).ln()).collect();
        let free = brute_force_normalizer(&PairwiseWeights::new(n), &log_pi).unwrap();
        assert!((free - 1.0).abs() <= 1e-12);
        // single cluster: every pair agrees
        let w = random_weights(&mut rng, n, 0.5, 0.5);
        let total: f64 = w.pairs().map(|(_, _, v)| 2.0 * v).sum();
        let one = brute_force_log_normalizer(&w, &[0.0]).unwrap();
        assert!((one - total).abs() <= 1e-12 * total.abs().max(1.0));
    }
    for w in [-3.0, -0.5, 0.0, 0.7, 2.0] {
        let mut pw = PairwiseWeights::new(2);
        pw.insert(0, 1, w).unwrap();
        let got = brute_force_normalizer(&pw, &[0.5f64.ln(); 2]).unwrap();
        let want = 0.5 * ((2.0 * w).exp() + 1.0);
        assert!((got / want - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn unnormalized_prior_counts_pairs_twice() {
    let mut w = PairwiseWeights::new(3);
    w.insert(0, 1, 1.5).unwrap();
    w.insert(1, 2, -2.0).unwrap();
    let lp = [0.25f64.ln(), 0.75f64.ln()];
    let c = Assignment::new(vec![0, 0, 1], 2).unwrap();
    let want = 2.0 * lp[0] + lp[1] + 3.0;
    assert!((log_unnormalized_prior(&c, &w, &lp).unwrap() - want).abs() < 1e-14);
    assert!(Assignment::new(vec![0, 2], 2).is_err());
}

#[test]
fn quadrature_evidence_matches_conjugate_closed_form() {
    // z ~ N(μ, s²), x | z ~ N(z, r²)  ⇒  x ~ N(μ, s² + r²)
    let (mu, s2, r2): (f64, f64, f64) = (0.4, 1.7, 0.3);
    let model = linear_gaussian_model(1.0, 0.0, 0.0, r2.ln());
    let mixture = MixtureParams::new(
        Tensor::matrix(1, 1, vec![mu]).unwrap(),
        Tensor::matrix(1, 1, vec![s2.ln()]).unwrap(),
        Tensor::row(vec![0.0]),
    )
    .unwrap();
    let xs = [1.3, -0.2, 2.0];
    let x = Tensor::matrix(3, 1, xs.to_vec()).unwrap();
    let table = brute_force_conditional_posterior(&x, &model, &mixture, &PairwiseWeights::new(3), 128).unwrap();
    let want: f64 = xs.iter().map(|&v| ln_normal(v, mu, s2 + r2)).sum();
    assert!((table.log_evidence - want).abs() < 1e-10, "{} vs {want}", table.log_evidence);
    assert_eq!(table.probs.len(), 1);
}

#[test]
fn posterior_follows_constraints() {
    // two clusters far apart; a strong must-link pulls the ambiguous point along
    let model = linear_gaussian_model(1.0, 0.0, 0.0, 0.1f64.ln());
    let mixture = MixtureParams::new(
        Tensor::matrix(2, 1, vec![-3.0, 3.0]).unwrap(),
        Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap(),
        Tensor::row(vec![0.5f64.ln(); 2]),
    )
    .unwrap();
    let x = Tensor::matrix(2, 1, vec![-3.0, 0.0]).unwrap();
    let free = brute_force_conditional_posterior(&x, &model, &mixture, &PairwiseWeights::new(2), 64).unwrap();
    let mut w = PairwiseWeights::new(2);
    w.insert(0, 1, 5.0).unwrap();
    let tied = brute_force_conditional_posterior(&x, &model, &mixture, &w, 64).unwrap();
    let same = |t: &dcgmm::prior::PosteriorTable| -> f64 {
        t.assignments.iter().zip(&t.probs).filter(|(a, _)| a[0] == a[1]).map(|(_, p)| p).sum()
    };
    assert!((same(&free) - 0.5).abs() < 0.05);
    assert!(same(&tied) > 0.99);
    assert!((tied.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn exact_posterior_encoder_closes_the_gap() {
    let (mu, s2, r2): (f64, f64, f64) = (0.4, 1.7, 0.3);
    let v = 1.0 / (1.0 / s2 + 1.0 / r2);
    let model = linear_gaussian_model(v / r2, v * mu / s2, v.ln(), r2.ln());
    let mixture = MixtureParams::new(
        Tensor::matrix(1, 1, vec![mu]).unwrap(),
        Tensor::matrix(1, 1, vec![s2.ln()]).unwrap(),
        Tensor::row(vec![0.0]),
    )
    .unwrap();
    let x = Tensor::matrix(2, 1, vec![0.9, -1.1]).unwrap();
    let gap = bound_gap_check(&x, &model, &mixture, &PairwiseWeights::new(2), 200, 64, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(gap.gap.abs() < 1e-8, "{gap:?}");
    assert!(gap.celbo_stderr < 1e-8);
}
