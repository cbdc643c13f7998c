//! Central-difference gradient checks for every graph operation.

use dcgmm::autodiff::{gradcheck, gradcheck_many, Graph, Tensor, Var, DEFAULT_STEP};
use dcgmm::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `Σ v ∘ R` for a fixed random `R`, so that every output coordinate
/// matters (plain sums of softmax outputs are constant).
fn project(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.value(v).dims2()?;
    let w = rand_matrix(&mut ChaCha8Rng::seed_from_u64(seed), r, c, -1.0, 1.0);
    let wv = g.constant(w);
    let m = g.mul(v, wv)?;
    g.sum(m)
}

fn assert_unary(name: &str, op: impl Fn(&mut Graph, Var) -> Result<Var>, x: &Tensor) {
    let report = gradcheck(
        |g, v| {
            let y = op(g, v)?;
            project(g, y, 99)
        },
        x,
        DEFAULT_STEP,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{name}: {report:?}");
}

fn assert_many(name: &str, op: impl Fn(&mut Graph, &[Var]) -> Result<Var>, xs: &[Tensor]) {
    let report = gradcheck_many(
        |g, v| {
            let y = op(g, v)?;
            project(g, y, 7)
        },
        xs,
        DEFAULT_STEP,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{name}: {report:?}");
}

#[test]
fn elementwise_unary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_matrix(&mut rng, 3, 4, -2.0, 2.0);
    let pos = rand_matrix(&mut rng, 3, 4, 0.5, 3.0);
    assert_unary("neg", |g, v| g.neg(v), &x);
    assert_unary("exp", |g, v| g.exp(v), &x);
    assert_unary("log", |g, v| g.log(v), &pos);
    assert_unary("sigmoid", |g, v| g.sigmoid(v), &x);
    assert_unary("softplus", |g, v| g.softplus(v), &x);
    assert_unary("square", |g, v| g.square(v), &x);
    assert_unary("scale", |g, v| g.scale(v, -2.5), &x);
    assert_unary("add_scalar", |g, v| g.add_scalar(v, 1.25), &x);
    // keep away from the kink and the clamp bounds
    let away = x.map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
    assert_unary("relu", |g, v| g.relu(v), &away);
    assert_unary("clamp", |g, v| g.clamp(v, -1.0, 1.0), &away.map(|v| if (v.abs() - 1.0).abs() < 0.1 { v * 0.5 } else { v }));
    assert_unary("transpose", |g, v| g.transpose(v), &x);
    assert_unary("slice_rows", |g, v| g.slice_rows(v, 1, 3), &x);
}

#[test]
fn reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_matrix(&mut rng, 4, 3, -3.0, 3.0);
    assert_unary("sum", |g, v| g.sum(v), &x);
    assert_unary("mean", |g, v| g.mean(v), &x);
    for axis in [0, 1] {
        assert_unary("sum_axis", |g, v| g.sum_axis(v, axis), &x);
        assert_unary("logsumexp", |g, v| g.logsumexp(v, axis), &x);
        assert_unary("softmax", |g, v| g.softmax(v, axis), &x);
    }
}

#[test]
fn binary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_matrix(&mut rng, 3, 4, -2.0, 2.0);
    let b = rand_matrix(&mut rng, 3, 4, -2.0, 2.0);
    let m = rand_matrix(&mut rng, 4, 2, -2.0, 2.0);
    let row = rand_matrix(&mut rng, 1, 4, -2.0, 2.0);
    let col = rand_matrix(&mut rng, 3, 1, -2.0, 2.0);
    assert_many("add", |g, v| g.add(v[0], v[1]), &[a.clone(), b.clone()]);
    assert_many("sub", |g, v| g.sub(v[0], v[1]), &[a.clone(), b.clone()]);
    assert_many("mul", |g, v| g.mul(v[0], v[1]), &[a.clone(), b.clone()]);
    assert_many("matmul", |g, v| g.matmul(v[0], v[1]), &[a.clone(), m]);
    assert_many("add_row", |g, v| g.add_row(v[0], v[1]), &[a.clone(), row]);
    assert_many("add_col", |g, v| g.add_col(v[0], v[1]), &[a.clone(), col.clone()]);
    assert_many("sub_col", |g, v| g.sub_col(v[0], v[1]), &[a, col]);
}

#[test]
fn fused_gaussian_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = rand_matrix(&mut rng, 5, 3, -2.0, 2.0);
    let mu = rand_matrix(&mut rng, 4, 3, -2.0, 2.0);
    let lv = rand_matrix(&mut rng, 4, 3, -1.0, 1.0);
    assert_many("gauss_log_density", |g, v| g.gauss_log_density(v[0], v[1], v[2]), &[z, mu, lv]);
}

#[test]
fn composite_through_shared_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_matrix(&mut rng, 3, 3, -1.0, 1.0);
    let w = rand_matrix(&mut rng, 3, 2, -1.0, 1.0);
    assert_many(
        "mlp",
        |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let s = g.sigmoid(h)?;
            let p = g.softmax(s, 1)?;
            let l = g.log(p)?;
            g.mul(l, p)
        },
        &[x, w],
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn logsumexp_softmax_any_values(seed in 0u64..10_000, rows in 1usize..5, cols in 1usize..5, spread in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_matrix(&mut rng, rows, cols, -spread, spread);
        for axis in [0, 1] {
            let r = gradcheck(|g, v| { let y = g.logsumexp(v, axis)?; project(g, y, seed) }, &x, DEFAULT_STEP, TOL).unwrap();
            prop_assert!(r.passed(), "logsumexp {:?}", r);
            let r = gradcheck(|g, v| { let y = g.softmax(v, axis)?; project(g, y, seed) }, &x, DEFAULT_STEP, TOL).unwrap();
            prop_assert!(r.passed(), "softmax {:?}", r);
        }
    }

    #[test]
    fn matmul_any_shapes(seed in 0u64..10_000, m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_matrix(&mut rng, m, k, -2.0, 2.0);
        let b = rand_matrix(&mut rng, k, n, -2.0, 2.0);
        let r = gradcheck_many(|g, v| { let y = g.matmul(v[0], v[1])?; project(g, y, seed) }, &[a, b], DEFAULT_STEP, TOL).unwrap();
        prop_assert!(r.passed(), "{:?}", r);
    }

    #[test]
    fn gaussian_density_any_shapes(seed in 0u64..10_000, b in 1usize..5, k in 1usize..4, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = rand_matrix(&mut rng, b, d, -2.0, 2.0);
        let mu = rand_matrix(&mut rng, k, d, -2.0, 2.0);
        let lv = rand_matrix(&mut rng, k, d, -1.5, 1.5);
        let r = gradcheck_many(|g, v| { let y = g.gauss_log_density(v[0], v[1], v[2])?; project(g, y, seed) }, &[z, mu, lv], DEFAULT_STEP, TOL).unwrap();
        prop_assert!(r.passed(), "{:?}", r);
    }
}
