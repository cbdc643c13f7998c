//! Responsibilities and the conditional evidence lower bound.
//!
//! For a minibatch with one reparameterized draw `z_i` per sample the
//! estimator is
//!
//! ```text
//! Σ_i ln p(x_i|z_i) − ln q(z_i|x_i)
//!   + Σ_i Σ_k p(k|z_i) [ln p(z_i|k) + ln π_k − ln p(k|z_i)]
//!   + Σ_{i≠j} Σ_k p(k|z_i) p(k|z_j) W_ij
//! ```
//!
//! with the constant `−ln Ω(π)` left out. Gradients flow through the
//! responsibilities `p(k|z)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{reparameterize, standard_normal, DecoderOutput, DecoderVars, MixtureParams, MixtureVars, Model, ModelVars};
use crate::prior::{brute_force_conditional_posterior, brute_force_log_normalizer, pairwise_penalty_graph, PairwiseWeights};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// How `−E_q[ln q(z|x)]` is estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// `−ln q(z|x)` at the sampled `z`.
    #[default]
    Sample,
    /// Closed-form Gaussian entropy.
    ClosedForm,
}

/// The summands of the bound for one batch. `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub reconstruction: f64,
    pub log_p_z_given_c: f64,
    pub log_prior_pi: f64,
    pub q_entropy: f64,
    pub cat_entropy: f64,
    pub pairwise: f64,
    pub total: f64,
}

impl ElboBreakdown {
    pub const FIELDS: [&'static str; 7] = [
        "reconstruction",
        "log_p_z_given_c",
        "log_prior_pi",
        "q_entropy",
        "cat_entropy",
        "pairwise",
        "total",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.reconstruction,
            self.log_p_z_given_c,
            self.log_prior_pi,
            self.q_entropy,
            self.cat_entropy,
            self.pairwise,
            self.total,
        ]
    }

    pub fn add_assign(&mut self, o: &ElboBreakdown) {
        self.reconstruction += o.reconstruction;
        self.log_p_z_given_c += o.log_p_z_given_c;
        self.log_prior_pi += o.log_prior_pi;
        self.q_entropy += o.q_entropy;
        self.cat_entropy += o.cat_entropy;
        self.pairwise += o.pairwise;
        self.total += o.total;
    }

    pub fn scaled(&self, s: f64) -> ElboBreakdown {
        ElboBreakdown {
            reconstruction: self.reconstruction * s,
            log_p_z_given_c: self.log_p_z_given_c * s,
            log_prior_pi: self.log_prior_pi * s,
            q_entropy: self.q_entropy * s,
            cat_entropy: self.cat_entropy * s,
            pairwise: self.pairwise * s,
            total: self.total * s,
        }
    }
}

/// Graph nodes of every summand.
#[derive(Clone, Copy, Debug)]
pub struct CelboVars {
    pub reconstruction: Var,
    pub log_p_z_given_c: Var,
    pub log_prior_pi: Var,
    pub q_entropy: Var,
    pub cat_entropy: Var,
    /// `None` when the bound was built without constraints.
    pub pairwise: Option<Var>,
    pub total: Var,
    pub responsibilities: Var,
    pub z: Var,
}

impl CelboVars {
    pub fn breakdown(&self, g: &Graph) -> Result<ElboBreakdown> {
        let s = |v: Var| g.scalar(v);
        Ok(ElboBreakdown {
            reconstruction: s(self.reconstruction)?,
            log_p_z_given_c: s(self.log_p_z_given_c)?,
            log_prior_pi: s(self.log_prior_pi)?,
            q_entropy: s(self.q_entropy)?,
            cat_entropy: s(self.cat_entropy)?,
            pairwise: match self.pairwise {
                Some(p) => s(p)?,
                None => 0.0,
            },
            total: s(self.total)?,
        })
    }

    /// The summands in [`ElboBreakdown::FIELDS`] order, `total` last.
    pub fn terms(&self) -> Vec<(&'static str, Var)> {
        let mut out = vec![
            ("reconstruction", self.reconstruction),
            ("log_p_z_given_c", self.log_p_z_given_c),
            ("log_prior_pi", self.log_prior_pi),
            ("q_entropy", self.q_entropy),
            ("cat_entropy", self.cat_entropy),
        ];
        if let Some(p) = self.pairwise {
            out.push(("pairwise", p));
        }
        out.push(("total", self.total));
        out
    }
}

/// `ln N(z_i | μ_k, diag σ²_k)` for every sample and cluster (`B×K`).
pub fn gaussian_log_density(z: &Tensor, means: &Tensor, log_vars: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (zv, mv, lv) = (g.constant(z.clone()), g.constant(means.clone()), g.constant(log_vars.clone()));
    let d = g.gauss_log_density(zv, mv, lv)?;
    Ok(g.value(d).clone())
}

/// Graph form of the Bayes responsibilities; returns `(P, ln P)`.
pub fn responsibilities_graph(g: &mut Graph, log_dens: Var, log_pi: Var) -> Result<(Var, Var)> {
    let scores = g.add_row(log_dens, log_pi)?;
    let norm = g.logsumexp(scores, 1)?;
    let log_p = g.sub_col(scores, norm)?;
    let p = g.softmax(scores, 1)?;
    Ok((p, log_p))
}

/// `p(k|z_i) ∝ N(z_i|μ_k, σ²_k) π_k`, computed in the log domain.
pub fn responsibilities(log_dens: &Tensor, log_pi: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (d, l) = (g.constant(log_dens.clone()), g.constant(log_pi.clone()));
    let (p, _) = responsibilities_graph(&mut g, d, l)?;
    Ok(g.value(p).clone())
}

fn check_unit_interval(x: &Tensor) -> Result<()> {
    if let Some(bad) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::domain(
            "reconstruction_term",
            format!("Bernoulli likelihood needs x in [0, 1], found {bad}"),
        ));
    }
    Ok(())
}

/// `Σ_i ln p(x_i | z_i)` as a graph node.
pub fn reconstruction_graph(g: &mut Graph, x: Var, dec: DecoderVars) -> Result<Var> {
    match dec {
        DecoderVars::Bernoulli { logits } => {
            check_unit_interval(g.value(x))?;
            // x·l − ln(1 + eˡ)
            let xl = g.mul(x, logits)?;
            let sp = g.softplus(logits)?;
            let ll = g.sub(xl, sp)?;
            g.sum(ll)
        }
        DecoderVars::Gaussian { mean, log_var } => gaussian_log_lik_graph(g, x, mean, log_var),
    }
}

/// `Σ ln N(x | mean, diag exp(log_var))` elementwise over same-shape tensors.
fn gaussian_log_lik_graph(g: &mut Graph, x: Var, mean: Var, log_var: Var) -> Result<Var> {
    let diff = g.sub(x, mean)?;
    let sq = g.square(diff)?;
    let nlv = g.neg(log_var)?;
    let prec = g.exp(nlv)?;
    let maha = g.mul(sq, prec)?;
    let inner = g.add(maha, log_var)?;
    let inner = g.add_scalar(inner, LN_2PI)?;
    let s = g.sum(inner)?;
    g.scale(s, -0.5)
}

/// `Σ_i ln p(x_i | z_i)` for decoder outputs already computed.
pub fn reconstruction_term(x: &Tensor, dec: &DecoderOutput) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let dv = match dec {
        DecoderOutput::Bernoulli { logits } => {
            x.same_dims(logits, "reconstruction_term")?;
            DecoderVars::Bernoulli {
                logits: g.constant(logits.clone()),
            }
        }
        DecoderOutput::Gaussian { mean, log_var } => {
            x.same_dims(mean, "reconstruction_term")?;
            DecoderVars::Gaussian {
                mean: g.constant(mean.clone()),
                log_var: g.constant(log_var.clone()),
            }
        }
    };
    let r = reconstruction_graph(&mut g, xv, dv)?;
    g.scalar(r)
}

/// `ln p(x | z)` for one observation against row `row` of decoder output.
pub fn observation_log_likelihood(x: &[f64], dec: &DecoderOutput, row: usize) -> Result<f64> {
    let mut total = 0.0;
    match dec {
        DecoderOutput::Bernoulli { logits } => {
            let l = logits.row_slice(row);
            if l.len() != x.len() {
                return Err(Error::shape("observation_log_likelihood", &[x.len()], &[l.len()]));
            }
            for (&xi, &li) in x.iter().zip(l) {
                total += xi * li - (li.max(0.0) + (-li.abs()).exp().ln_1p());
            }
        }
        DecoderOutput::Gaussian { mean, log_var } => {
            let (m, lv) = (mean.row_slice(row), log_var.row_slice(row));
            if m.len() != x.len() {
                return Err(Error::shape("observation_log_likelihood", &[x.len()], &[m.len()]));
            }
            for ((&xi, &mi), &li) in x.iter().zip(m).zip(lv) {
                let d = xi - mi;
                total += -0.5 * (LN_2PI + li + d * d * (-li).exp());
            }
        }
    }
    Ok(total)
}

/// Options for building the bound.
#[derive(Clone, Copy, Debug, Default)]
pub struct CelboOptions {
    pub entropy: EntropyMode,
}

/// Builds the single-draw bound on a batch.
///
/// `eps` is the `B×D` standard-normal draw. With `wb = None` the pairwise
/// summand is omitted, which is the unconstrained mixture-prior bound.
#[allow(clippy::too_many_arguments)]
pub fn celbo_graph(
    g: &mut Graph,
    model: &Model,
    mv: &ModelVars,
    mx: &MixtureVars,
    x: Var,
    eps: Var,
    wb: Option<&Tensor>,
    opts: CelboOptions,
) -> Result<CelboVars> {
    let enc = model.encode_graph(g, mv, x)?;
    let z = reparameterize(g, enc.mean, enc.log_var, eps)?;
    let dec = model.decode_graph(g, mv, z)?;
    let reconstruction = reconstruction_graph(g, x, dec)?;

    let log_dens = g.gauss_log_density(z, mx.means, mx.log_vars)?;
    let (p, log_p) = responsibilities_graph(g, log_dens, mx.log_weights)?;
    let weighted = g.mul(p, log_dens)?;
    let log_p_z_given_c = g.sum(weighted)?;
    let mass = g.sum_axis(p, 0)?;
    let prior_w = g.mul(mass, mx.log_weights)?;
    let log_prior_pi = g.sum(prior_w)?;
    let plogp = g.mul(p, log_p)?;
    let neg_ent = g.sum(plogp)?;
    let cat_entropy = g.neg(neg_ent)?;

    let q_entropy = match opts.entropy {
        EntropyMode::Sample => {
            let log_q = gaussian_log_lik_graph(g, z, enc.mean, enc.log_var)?;
            g.neg(log_q)?
        }
        EntropyMode::ClosedForm => {
            let s = g.sum(enc.log_var)?;
            let n = g.value(enc.log_var).len() as f64;
            let s = g.add_scalar(s, n * (LN_2PI + 1.0))?;
            g.scale(s, 0.5)?
        }
    };

    let mut total = g.add(reconstruction, log_p_z_given_c)?;
    total = g.add(total, log_prior_pi)?;
    total = g.add(total, q_entropy)?;
    total = g.add(total, cat_entropy)?;
    let pairwise = match wb {
        Some(wb) => {
            let pen = pairwise_penalty_graph(g, p, wb)?;
            total = g.add(total, pen)?;
            Some(pen)
        }
        None => None,
    };
    Ok(CelboVars {
        reconstruction,
        log_p_z_given_c,
        log_prior_pi,
        q_entropy,
        cat_entropy,
        pairwise,
        total,
        responsibilities: p,
        z,
    })
}

/// Builds the bound on caller-supplied leaves: the network parameters in
/// [`Model::params`] order followed by the mixture means and log-variances.
/// The mixture weights enter as a constant. Used for gradient checks.
#[allow(clippy::too_many_arguments)]
pub fn celbo_with_leaves(
    g: &mut Graph,
    model: &Model,
    leaves: &[Var],
    log_weights: &Tensor,
    x: &Tensor,
    eps: &Tensor,
    wb: Option<&Tensor>,
    opts: CelboOptions,
) -> Result<CelboVars> {
    let n = model.params().len();
    if leaves.len() != n + 2 {
        return Err(Error::Contract(format!("expected {} leaves, got {}", n + 2, leaves.len())));
    }
    let mv = ModelVars(leaves[..n].to_vec());
    let mx = MixtureVars {
        means: leaves[n],
        log_vars: leaves[n + 1],
        log_weights: g.constant(log_weights.clone()),
    };
    let xv = g.constant(x.clone());
    let ev = g.constant(eps.clone());
    celbo_graph(g, model, &mv, &mx, xv, ev, wb, opts)
}

/// Evaluates the bound on a batch with fixed noise `eps`.
pub fn celbo(
    model: &Model,
    mixture: &MixtureParams,
    x: &Tensor,
    eps: &Tensor,
    wb: Option<&Tensor>,
    opts: CelboOptions,
) -> Result<ElboBreakdown> {
    let mut g = Graph::new();
    let mv = model.bind(&mut g, false);
    let mx = mixture.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let ev = g.constant(eps.clone());
    let out = celbo_graph(&mut g, model, &mv, &mx, xv, ev, wb, opts)?;
    out.breakdown(&g)
}

/// Standard VAE bound with an `N(0, I)` prior, used for pretraining:
/// `Σ ln p(x|z) − KL(q(z|x) ‖ N(0, I))`.
pub fn vae_elbo_graph(g: &mut Graph, model: &Model, mv: &ModelVars, x: Var, eps: Var) -> Result<Var> {
    let enc = model.encode_graph(g, mv, x)?;
    let z = reparameterize(g, enc.mean, enc.log_var, eps)?;
    let dec = model.decode_graph(g, mv, z)?;
    let rec = reconstruction_graph(g, x, dec)?;
    // −KL = ½ Σ (1 + lv − μ² − e^lv)
    let mu2 = g.square(enc.mean)?;
    let var = g.exp(enc.log_var)?;
    let a = g.sub(enc.log_var, mu2)?;
    let a = g.sub(a, var)?;
    let a = g.add_scalar(a, 1.0)?;
    let s = g.sum(a)?;
    let neg_kl = g.scale(s, 0.5)?;
    g.add(rec, neg_kl)
}

/// Result of comparing the bound against the exact log evidence.
#[derive(Clone, Copy, Debug)]
pub struct BoundGap {
    /// Monte Carlo mean of the full bound, `−ln Ω(π)` included.
    pub celbo_mean: f64,
    pub celbo_stderr: f64,
    pub log_evidence: f64,
    /// `log_evidence − celbo_mean`.
    pub gap: f64,
}

/// Estimates `E[bound]` over `draws` noise samples on a tiny instance and
/// compares it with `ln p(X | W)` from the exact quadrature oracle.
pub fn bound_gap_check<R: Rng + ?Sized>(
    x: &Tensor,
    model: &Model,
    mixture: &MixtureParams,
    w: &PairwiseWeights,
    draws: usize,
    nodes: usize,
    rng: &mut R,
) -> Result<BoundGap> {
    if draws < 2 {
        return Err(Error::Contract("bound_gap_check needs at least two draws".into()));
    }
    let exact = brute_force_conditional_posterior(x, model, mixture, w, nodes)?;
    let log_omega = brute_force_log_normalizer(w, mixture.log_weights.data())?;
    let idx: Vec<usize> = (0..x.rows()).collect();
    let wb = crate::prior::gather_batch_weights(w, &idx)?;
    let d = model.spec().latent_dim;

    let mut mean = 0.0;
    let mut m2 = 0.0;
    for t in 1..=draws {
        let eps = standard_normal(rng, x.rows(), d);
        let mut g = Graph::new();
        let mv = model.bind(&mut g, false);
        let mx = mixture.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let ev = g.constant(eps);
        let out = celbo_graph(&mut g, model, &mv, &mx, xv, ev, Some(&wb), CelboOptions::default())?;
        let v = g.scalar(out.total)? - log_omega;
        let delta = v - mean;
        mean += delta / t as f64;
        m2 += delta * (v - mean);
    }
    let n = draws as f64;
    let var = m2 / (n - 1.0);
    Ok(BoundGap {
        celbo_mean: mean,
        celbo_stderr: (var / n).sqrt(),
        log_evidence: exact.log_evidence,
        gap: exact.log_evidence - mean,
    })
}
