//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use dcgmm::autodiff::Tensor;
use dcgmm::prior::PairwiseWeights;
use rand::Rng;

/// Every permutation of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Best matched fraction over all injective relabelings of `pred` into a
/// label space of size max(K_pred, K_true).
pub fn brute_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let k = kp.max(kt);
    let mut best = 0;
    for perm in permutations(k) {
        let hits = pred.iter().zip(truth).filter(|(p, t)| perm[**p] == **t).count();
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}

/// ARI from explicit enumeration of all sample pairs.
pub fn pair_counting_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let total = a + b + c + d;
    let expected = (a + b) * (a + c) / total;
    let max = 0.5 * ((a + b) + (a + c));
    if max == expected {
        return 1.0;
    }
    (a - expected) / (max - expected)
}

/// `Σ_{i≠j} W_ij Σ_k P_ik P_jk` by direct loops.
pub fn penalty_double_sum(p: &Tensor, w: &PairwiseWeights) -> f64 {
    let (b, k) = p.dims2().unwrap();
    let mut s = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i != j {
                for c in 0..k {
                    s += w.get(i, j) * p.at(i, c) * p.at(j, c);
                }
            }
        }
    }
    s
}

/// Rows on the probability simplex.
pub fn random_simplex_rows<R: Rng>(rng: &mut R, rows: usize, k: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    Tensor::matrix(rows, k, data).unwrap()
}

/// Sparse symmetric weights: each pair present with probability `density`.
pub fn random_weights<R: Rng>(rng: &mut R, n: usize, density: f64, scale: f64) -> PairwiseWeights {
    let mut w = PairwiseWeights::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                w.insert(i, j, rng.gen_range(-scale..scale)).unwrap();
            }
        }
    }
    w
}

pub fn random_labels<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..k)).collect()
}

/// One-dimensional linear-Gaussian model expressed with the library's
/// networks: ReLU hidden units shifted far into their linear range make
/// encoder mean `c·x + d`, encoder log-variance `lv_q`, decoder mean `z`
/// and decoder log-variance `lv_x`.
pub fn linear_gaussian_model(c: f64, d: f64, lv_q: f64, lv_x: f64) -> dcgmm::model::Model {
    use dcgmm::model::{DecoderKind, Model, NetworkSpec};
    const SHIFT: f64 = 100.0;
    let s = |v: f64| Tensor::matrix(1, 1, vec![v]).unwrap();
    let spec = NetworkSpec::new(1, vec![1], 1, DecoderKind::Gaussian);
    let params = vec![
        s(1.0),
        s(SHIFT), // encoder hidden: x + 100
        s(c),
        s(d - c * SHIFT), // encoder mean
        s(0.0),
        s(lv_q), // encoder log-variance
        s(1.0),
        s(SHIFT), // decoder hidden: z + 100
        s(1.0),
        s(-SHIFT), // decoder mean
        s(0.0),
        s(lv_x), // decoder log-variance
    ];
    Model::from_params(spec, params).unwrap()
}

/// `ln N(x | m, v)`.
pub fn ln_normal(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m) * (x - m) / v)
}

/// Four-blob end-to-end suite: 2000 points, 80/20 split, 600 constraints.
pub mod blobs {
    use dcgmm::data::{four_blobs, split};
    use dcgmm::metrics::Scores;
    use dcgmm::model::DecoderKind;
    use dcgmm::pipeline::draw_constraints;
    use dcgmm::prior::PairwiseWeights;
    use dcgmm::trainer::{fit, ConstraintSettings, RunConfig, TestSplit, Weighting};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub const N: usize = 2000;
    pub const EPOCHS: usize = 150;
    pub const BATCH: usize = 128;
    pub const CONSTRAINTS: usize = 600;

    pub fn config(seed: u64) -> RunConfig {
        RunConfig {
            k: 4,
            latent_dim: 2,
            hidden: vec![64, 64],
            decoder: DecoderKind::Gaussian,
            batch_size: BATCH,
            epochs: EPOCHS,
            seed,
            ..RunConfig::default()
        }
    }

    /// Best test scores of one run; `constraints = None` trains with `W = 0`.
    pub fn run(seed: u64, constraints: Option<(f64, Weighting)>) -> dcgmm::Result<Scores> {
        let ds = four_blobs(N, 3.0, 1.25, &mut ChaCha8Rng::seed_from_u64(1000 + seed))?;
        let (train, test) = split(&ds, 0.8, seed)?;
        let labels = train.labels.as_deref().unwrap();
        let w = match constraints {
            Some((noise, weighting)) => {
                let settings = ConstraintSettings {
                    count: CONSTRAINTS,
                    noise,
                    weighting,
                    ..ConstraintSettings::default()
                };
                draw_constraints(labels, &settings, seed)?
            }
            None => PairwiseWeights::new(train.n()),
        };
        let t = TestSplit {
            x: &test.x,
            labels: test.labels.as_deref().unwrap(),
        };
        let out = fit(&train.x, &w, Some(t), &config(seed), &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(out.best.expect("test split given").scores)
    }
}
