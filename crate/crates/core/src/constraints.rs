//! Sampling pairwise constraints from labels, label-flip noise, and the
//! mapping from noise level to confidence weight.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::PairwiseWeights;

/// Weight magnitude used for clean constraints.
pub const DEFAULT_MAGNITUDE: f64 = 1e4;
/// Default number of sampled constraints.
pub const DEFAULT_N_CONSTRAINTS: usize = 6000;
/// Default confidence scale for the noisy-constraint heuristic.
pub const DEFAULT_ALPHA: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Must,
    Cannot,
}

impl Kind {
    pub fn flipped(self) -> Kind {
        match self {
            Kind::Must => Kind::Cannot,
            Kind::Cannot => Kind::Must,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constraint {
    pub i: usize,
    pub j: usize,
    pub kind: Kind,
    pub magnitude: f64,
}

impl Constraint {
    pub fn new(i: usize, j: usize, kind: Kind, magnitude: f64) -> Result<Self> {
        if i == j {
            return Err(Error::Contract(format!("constraint links {i} to itself")));
        }
        if !(magnitude > 0.0 && magnitude.is_finite()) {
            return Err(Error::domain("Constraint::new", format!("magnitude {magnitude} must be positive")));
        }
        Ok(Constraint { i, j, kind, magnitude })
    }

    /// Must-link if the labels agree, cannot-link otherwise.
    pub fn from_labels(labels: &[usize], i: usize, j: usize, magnitude: f64) -> Result<Self> {
        let kind = if labels[i] == labels[j] { Kind::Must } else { Kind::Cannot };
        Constraint::new(i, j, kind, magnitude)
    }

    /// Signed weight: `+magnitude` for must-links, `−magnitude` for cannot-links.
    pub fn weight(&self) -> f64 {
        match self.kind {
            Kind::Must => self.magnitude,
            Kind::Cannot => -self.magnitude,
        }
    }
}

/// Flip fraction and confidence scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub q: f64,
    pub alpha: f64,
}

impl NoiseSpec {
    pub fn new(q: f64, alpha: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&q) {
            return Err(Error::domain("NoiseSpec", format!("flip fraction {q} outside [0, 0.5)")));
        }
        Ok(NoiseSpec { q, alpha })
    }

    /// Weight magnitude for this noise level; clean labels keep the default.
    pub fn magnitude(&self, clean: f64) -> Result<f64> {
        if self.q == 0.0 {
            Ok(clean)
        } else {
            confidence_weight(self.q, self.alpha)
        }
    }
}

/// `n_c` constraints, each from a uniformly drawn unordered pair of distinct
/// samples. Draws are independent, so a pair can come up more than once.
pub fn sample_constraints<R: Rng + ?Sized>(
    labels: &[usize],
    n_c: usize,
    magnitude: f64,
    rng: &mut R,
) -> Result<Vec<Constraint>> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::Contract(format!("need at least two samples to draw pairs, have {n}")));
    }
    let mut out = Vec::with_capacity(n_c);
    for _ in 0..n_c {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        out.push(Constraint::from_labels(labels, i.min(j), i.max(j), magnitude)?);
    }
    Ok(out)
}

/// Flips each constraint's kind independently with probability `q`.
pub fn flip_noise<R: Rng + ?Sized>(constraints: &[Constraint], q: f64, rng: &mut R) -> Result<Vec<Constraint>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain("flip_noise", format!("probability {q} outside [0, 1]")));
    }
    Ok(constraints
        .iter()
        .map(|c| {
            let flip = rng.gen::<f64>() < q;
            Constraint {
                kind: if flip { c.kind.flipped() } else { c.kind },
                ..*c
            }
        })
        .collect())
}

/// `α · ln((1 − q) / q)` for a flip fraction `0 < q < 0.5`.
pub fn confidence_weight(q: f64, alpha: f64) -> Result<f64> {
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::domain(
            "confidence_weight",
            format!("flip fraction {q} outside (0, 0.5); the weight would not be positive"),
        ));
    }
    Ok(alpha * ((1.0 - q) / q).ln())
}

/// Signed sparse weights; later constraints on the same pair win.
pub fn build_weights(constraints: &[Constraint], n: usize) -> Result<PairwiseWeights> {
    let mut w = PairwiseWeights::new(n);
    for c in constraints {
        w.insert(c.i, c.j, c.weight())?;
    }
    Ok(w)
}
