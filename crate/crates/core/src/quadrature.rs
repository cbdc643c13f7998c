//! Gauss–Hermite quadrature for Gaussian expectations in one dimension.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes and weights for `∫ f(x) e^{-x²} dx ≈ Σ w_j f(x_j)`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Roots of the `n`-th Hermite polynomial by Newton iteration on the
    /// orthonormal three-term recurrence.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > 400 {
            return Err(Error::Contract(format!("Gauss-Hermite order {n} outside 1..=400")));
        }
        const PIM4: f64 = 0.751_125_544_464_942_5; // π^(-1/4)
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut z = 0.0f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let jf = j as f64;
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonFinite {
                    what: format!("Gauss-Hermite root {i} of order {n} did not converge"),
                });
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        Ok(GaussHermite { nodes: x, weights: w })
    }

    /// Points `μ + √2 σ x_j` and log-weights `ln(w_j / √π)` so that
    /// `E_{N(μ,σ²)}[f] ≈ Σ exp(lw_j) f(z_j)`.
    pub fn normal_rule(&self, mean: f64, sd: f64) -> (Vec<f64>, Vec<f64>) {
        let pts = self.nodes.iter().map(|t| mean + std::f64::consts::SQRT_2 * sd * t).collect();
        let lw = self.weights.iter().map(|w| w.ln() - 0.5 * PI.ln()).collect();
        (pts, lw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_integrate_gaussian_moments() {
        for n in [1, 2, 5, 20, 64, 128] {
            let gh = GaussHermite::new(n).unwrap();
            let m0: f64 = gh.weights.iter().sum();
            assert!((m0 - PI.sqrt()).abs() < 1e-12, "n={n} m0={m0}");
            if n >= 2 {
                let m2: f64 = gh.nodes.iter().zip(&gh.weights).map(|(x, w)| w * x * x).sum();
                assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn two_point_rule_is_known() {
        let gh = GaussHermite::new(2).unwrap();
        let r = 0.5f64.sqrt();
        assert!((gh.nodes[0] - r).abs() < 1e-14 && (gh.nodes[1] + r).abs() < 1e-14);
        assert!((gh.weights[0] - PI.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn normal_expectation_of_quartic() {
        // E[z^4] for N(1, 2^2) = μ⁴ + 6μ²σ² + 3σ⁴ = 1 + 24 + 48
        let gh = GaussHermite::new(64).unwrap();
        let (z, lw) = gh.normal_rule(1.0, 2.0);
        let e: f64 = z.iter().zip(&lw).map(|(z, l)| l.exp() * z.powi(4)).sum();
        assert!((e - 73.0).abs() < 1e-9, "{e}");
    }
}
