mod common;

use common::{blobs, linear_gaussian_model};
use dcgmm::autodiff::Tensor;
use dcgmm::constraints::build_weights;
use dcgmm::data::{four_blobs, split};
use dcgmm::model::{MixtureParams, MIXTURE_VARIANCE_FLOOR};
use dcgmm::pipeline::draw_constraints;
use dcgmm::prior::PairwiseWeights;
use dcgmm::trainer::{fit, init_mixture, learning_rate, make_batches, Batching, ConstraintSettings, FitOutcome, RunConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One constrained run on the four-blob suite.
fn blob_run(epochs: usize) -> (FitOutcome, RunConfig) {
    let ds = four_blobs(blobs::N, 3.0, 1.25, &mut ChaCha8Rng::seed_from_u64(1000)).unwrap();
    let (train, _) = split(&ds, 0.8, 0).unwrap();
    let settings = ConstraintSettings {
        count: blobs::CONSTRAINTS,
        ..ConstraintSettings::default()
    };
    let w = draw_constraints(train.labels.as_deref().unwrap(), &settings, 0).unwrap();
    let cfg = RunConfig { epochs, ..blobs::config(0) };
    (fit(&train.x, &w, None, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), cfg)
}

#[test]
fn synthetic_run_properties() {
    let (out, cfg) = blob_run(60);

    // pretraining bound rises, allowing a couple of transient dips
    let dips = out.log.pretrain.windows(2).filter(|p| p[1] < p[0]).count();
    assert!(dips <= 2, "{dips} dips in {:?}", out.log.pretrain);
    assert!(out.log.pretrain.last() > out.log.pretrain.first());

    // smoothed bound rises; the batch-dependent pairwise term makes it
    // wobble on the plateau, so only small drawdowns are tolerated
    let totals: Vec<f64> = out.log.epochs.iter().map(|r| r.breakdown.total).collect();
    let smooth: Vec<f64> = totals.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    let range = smooth.iter().copied().fold(f64::MIN, f64::max) - smooth[0];
    let mut peak = f64::MIN;
    let mut drawdown = 0.0f64;
    for &v in &smooth {
        peak = peak.max(v);
        drawdown = drawdown.max(peak - v);
    }
    assert!(range > 0.0 && drawdown <= 0.1 * range, "drawdown {drawdown} of range {range}: {smooth:?}");

    // weights frozen, variances floored, schedule followed
    assert_eq!(out.mixture.log_weights, Tensor::row(vec![-(4f64).ln(); 4]));
    assert!(out.mixture.log_vars.data().iter().all(|&v| v >= MIXTURE_VARIANCE_FLOOR.ln()));
    for (i, r) in out.log.epochs.iter().enumerate() {
        assert_eq!(r.epoch, i + 1);
        assert_eq!(r.learning_rate, learning_rate(&cfg, i));
        assert!(r.breakdown.values().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn unconstrained_rows_have_zero_penalty_and_repeat_exactly() {
    let ds = four_blobs(400, 3.0, 1.25, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let cfg = RunConfig {
        epochs: 8,
        pretrain_epochs: 3,
        batch_size: 64,
        ..blobs::config(3)
    };
    let w = PairwiseWeights::new(ds.n());
    let a = fit(&ds.x, &w, None, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert!(a.log.epochs.iter().all(|r| r.breakdown.pairwise.to_bits() == 0));
    let b = fit(&ds.x, &w, None, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.mixture, b.mixture);
    let c = fit(&ds.x, &w, None, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_ne!(a.log.to_csv(), c.log.to_csv());
}

#[test]
fn uniform_batches_match_hypergeometric_pair_count() {
    let (n, bs, n_pairs) = (1000, 100, 300);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    // disjoint pairs so every pair's indicator has the same law
    let mut w = PairwiseWeights::new(n);
    for p in idx.chunks(2).take(n_pairs) {
        w.insert(p[0], p[1], 1.0).unwrap();
    }
    let mut counts = Vec::new();
    let mut member = vec![usize::MAX; n];
    for _ in 0..400 {
        for (b, batch) in make_batches(n, bs, Batching::Uniform, &w, &mut rng).unwrap().iter().enumerate() {
            for &i in batch {
                member[i] = b;
            }
        }
        let mut per_batch = vec![0.0; n / bs];
        for (i, j, _) in w.pairs() {
            if member[i] == member[j] {
                per_batch[member[i]] += 1.0;
            }
        }
        counts.extend(per_batch);
    }
    // each pair lands in a given batch with probability B(B-1)/(n(n-1))
    let p = (bs * (bs - 1)) as f64 / (n * (n - 1)) as f64;
    let expected = n_pairs as f64 * p;
    let m = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / m;
    let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (m - 1.0);
    let sigma = (var / m).sqrt();
    assert!((mean - expected).abs() < 4.0 * sigma, "mean {mean} expected {expected} sigma {sigma}");
}

#[test]
fn pair_aware_batches_pack_constrained_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 2000;
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
    let cs = dcgmm::constraints::sample_constraints(&labels, 200, 1.0, &mut rng).unwrap();
    let w = build_weights(&cs, n).unwrap();
    let count = |mode| {
        let batches = make_batches(n, 128, mode, &w, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut total = 0;
        for b in &batches {
            let set: std::collections::BTreeSet<usize> = b.iter().copied().collect();
            total += w.pairs().filter(|(i, j, _)| set.contains(i) && set.contains(j)).count();
        }
        total as f64 / batches.len() as f64
    };
    assert!(count(Batching::PairAware) >= 32.0);
    assert!(count(Batching::Uniform) < 2.0);
}

#[test]
fn mixture_init_recovers_latent_blobs() {
    let model = linear_gaussian_model(1.0, 0.0, 0.0, 0.0);
    let centres = [-5.0, 0.0, 5.0];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..900).map(|i| centres[i % 3] + 0.3 * rng.gen_range(-1.0..1.0)).collect();
    let cfg = RunConfig {
        k: 3,
        latent_dim: 1,
        ..RunConfig::default()
    };
    let mix: MixtureParams = init_mixture(&model, &Tensor::matrix(900, 1, x).unwrap(), &cfg, &mut rng).unwrap();
    let mut got = mix.means.data().to_vec();
    got.sort_by(f64::total_cmp);
    for (g, c) in got.iter().zip(centres) {
        assert!((g - c).abs() < 0.1, "{got:?}");
    }
    assert!(mix.log_vars.data().iter().all(|&v| v >= 1e-3f64.ln()));
    assert_eq!(mix.log_weights, Tensor::row(vec![-(3f64).ln(); 3]));
}
