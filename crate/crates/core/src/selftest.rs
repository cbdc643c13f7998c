//! Quick oracle and gradient checks run by `dcgmm selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck_many, Tensor, DEFAULT_STEP};
use crate::error::Result;
use crate::metrics::{accuracy, ari, nmi};
use crate::model::{standard_normal, Activation, DecoderKind, MixtureParams, Model, NetworkSpec};
use crate::objective::{celbo_with_leaves, CelboOptions};
use crate::prior::{brute_force_normalizer, gather_batch_weights, pairwise_penalty, PairwiseWeights};
use crate::quadrature::GaussHermite;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn random_rows<R: Rng>(rng: &mut R, rows: usize, k: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    Tensor::matrix(rows, k, data).expect("shape")
}

fn penalty_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let b = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=5);
        let p = random_rows(&mut rng, b, k);
        let mut w = PairwiseWeights::new(b);
        for i in 0..b {
            for j in i + 1..b {
                if rng.gen_bool(0.5) {
                    w.insert(i, j, rng.gen_range(-3.0..3.0))?;
                }
            }
        }
        let wb = gather_batch_weights(&w, &(0..b).collect::<Vec<_>>())?;
        let mut direct = 0.0;
        for i in 0..b {
            for j in 0..b {
                if i != j {
                    for c in 0..k {
                        direct += w.get(i, j) * p.at(i, c) * p.at(j, c);
                    }
                }
            }
        }
        worst = worst.max((pairwise_penalty(&p, &wb)? - direct).abs());
    }
    Ok((worst <= 1e-12, format!("max abs error {worst:.2e}")))
}

fn normalizer_oracle() -> Result<(bool, String)> {
    let half = [0.5f64.ln(); 2];
    let mut worst = 0.0f64;
    for w in [-2.0, 0.0, 0.3, 1.5] {
        let mut pw = PairwiseWeights::new(2);
        pw.insert(0, 1, w)?;
        let exact = 0.5 * ((2.0 * w).exp() + 1.0);
        worst = worst.max((brute_force_normalizer(&pw, &half)? / exact - 1.0).abs());
    }
    let free = brute_force_normalizer(&PairwiseWeights::new(5), &[(1.0f64 / 3.0).ln(); 3])?;
    worst = worst.max((free - 1.0).abs());
    Ok((worst <= 1e-12, format!("max rel error {worst:.2e}")))
}

fn celbo_gradients() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut spec = NetworkSpec::new(3, vec![4], 2, DecoderKind::Gaussian);
    spec.activation = Activation::Sigmoid;
    let model = Model::new(spec, &mut rng)?;
    let mixture = MixtureParams::new(
        standard_normal(&mut rng, 3, 2),
        Tensor::matrix(3, 2, (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect())?,
        Tensor::row(vec![(1.0f64 / 3.0).ln(); 3]),
    )?;
    let x = standard_normal(&mut rng, 4, 3);
    let eps = standard_normal(&mut rng, 4, 2);
    let mut w = PairwiseWeights::new(4);
    w.insert(0, 1, 1.5)?;
    w.insert(2, 3, -0.7)?;
    let wb = gather_batch_weights(&w, &[0, 1, 2, 3])?;
    let mut leaves: Vec<Tensor> = model.params().to_vec();
    leaves.push(mixture.means.clone());
    leaves.push(mixture.log_vars.clone());
    let report = gradcheck_many(
        |g, vars| {
            let out = celbo_with_leaves(g, &model, vars, &mixture.log_weights, &x, &eps, Some(&wb), CelboOptions::default())?;
            Ok(out.total)
        },
        &leaves,
        DEFAULT_STEP,
        1e-4,
    )?;
    Ok((report.passed(), format!("max rel error {:.2e}", report.max_rel_error)))
}

fn metric_examples() -> Result<(bool, String)> {
    let ok = accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1])? == 0.5
        && accuracy(&[2, 0, 1, 0], &[0, 1, 2, 1])? == 1.0
        && (ari(&[0, 1, 0, 1], &[0, 0, 1, 1])? + 0.5).abs() < 1e-15
        && nmi(&[0, 0, 0, 0], &[0, 1, 0, 1])? == 0.0
        && (nmi(&[1, 1, 0, 0], &[0, 0, 1, 1])? - 1.0).abs() < 1e-12;
    Ok((ok, String::new()))
}

fn quadrature_moments() -> Result<(bool, String)> {
    let gh = GaussHermite::new(64)?;
    let (z, lw) = gh.normal_rule(0.5, 1.5);
    let m2: f64 = z.iter().zip(&lw).map(|(z, l)| l.exp() * z * z).sum();
    let err = (m2 - (0.25 + 2.25)).abs();
    Ok((err < 1e-10, format!("second moment error {err:.2e}")))
}

/// Runs every check; the run passes when all of them do.
pub fn run() -> Vec<Check> {
    vec![
        check("pairwise penalty vs double sum", penalty_oracle),
        check("prior normalizer closed forms", normalizer_oracle),
        check("bound gradient vs central differences", celbo_gradients),
        check("metric fixed examples", metric_examples),
        check("Gauss-Hermite moments", quadrature_moments),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn selftest_passes() {
        for c in super::run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
