//! Pairwise prior information and the constraint-conditioned prior over
//! cluster assignments.
//!
//! `W` is sparse and symmetric: `W_ij > 0` is a must-link, `W_ij < 0` a
//! cannot-link, and `|W_ij|` the confidence. The unnormalized prior of a
//! joint assignment `c` is
//!
//! ```text
//! ln p̃(c | W) = Σ_i ln π_{c_i} + Σ_{i≠j} W_ij δ(c_i, c_j)
//! ```
//!
//! where the sum over `i ≠ j` runs over ordered pairs, so every stored pair
//! contributes `2 W_ij` when its endpoints agree. The batch penalty uses the
//! same convention, so a magnitude `w` is worth `2w` nats per agreeing pair.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use log::warn;

use crate::autodiff::{lse, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{MixtureParams, Model};
use crate::objective::observation_log_likelihood;
use crate::quadrature::GaussHermite;

/// Exhaustive oracles refuse instances with more assignments than this.
pub const MAX_ENUMERATION: usize = 1_000_000;

/// Sparse symmetric map `(i, j) -> W_ij` over `n` samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairwiseWeights {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

fn key(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

impl PairwiseWeights {
    pub fn new(n: usize) -> Self {
        PairwiseWeights {
            n,
            entries: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored unordered pairs.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Store `W_ij = W_ji = w`. A pair that is already present is
    /// overwritten; the previous weight is returned.
    pub fn insert(&mut self, i: usize, j: usize, w: f64) -> Result<Option<f64>> {
        if i == j {
            return Err(Error::Contract(format!("self-link ({i}, {i}) is not allowed")));
        }
        for idx in [i, j] {
            if idx >= self.n {
                return Err(Error::OutOfRange {
                    index: idx,
                    limit: self.n,
                });
            }
        }
        if !w.is_finite() {
            return Err(Error::NonFinite {
                what: format!("weight of pair ({i}, {j})"),
            });
        }
        let prev = self.entries.insert(key(i, j), w);
        if let Some(p) = prev {
            warn!("pair ({i}, {j}) given twice; weight {p} replaced by {w}");
        }
        Ok(prev)
    }

    /// `W_ij`, zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&key(i, j)).copied().unwrap_or(0.0)
    }

    /// Stored pairs as `(i, j, w)` with `i < j`, in ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    /// Load `i,j,w` lines. Blank lines and lines starting with `#` are skipped.
    pub fn read_csv(path: &Path, n: usize) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, n, path)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, n: usize, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let bad = |line: u64, detail: String| Error::Format {
            kind: "constraint",
            path: path.to_path_buf(),
            detail: format!("line {line}: {detail}"),
        };
        let mut w = PairwiseWeights::new(n);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(0, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 3 {
                return Err(bad(line, format!("expected 3 fields, found {}", rec.len())));
            }
            let i: usize = rec[0].parse().map_err(|e| bad(line, format!("{e}")))?;
            let j: usize = rec[1].parse().map_err(|e| bad(line, format!("{e}")))?;
            let v: f64 = rec[2].parse().map_err(|e| bad(line, format!("{e}")))?;
            w.insert(i, j, v).map_err(|e| bad(line, e.to_string()))?;
        }
        Ok(w)
    }

    /// One `i,j,w` line per stored pair, `i < j`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, j, w) in self.pairs() {
            writeln!(out, "{i},{j},{w}")?;
        }
        Ok(())
    }
}

/// Joint cluster assignment of `n` samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
            return Err(Error::OutOfRange { index: bad, limit: k });
        }
        Ok(Assignment(labels))
    }
}

/// `Σ_i ln π_{c_i} + Σ_{i≠j} W_ij δ(c_i, c_j)`.
pub fn log_unnormalized_prior(c: &Assignment, w: &PairwiseWeights, log_pi: &[f64]) -> Result<f64> {
    if c.0.len() != w.n() {
        return Err(Error::shape("log_unnormalized_prior", &[c.0.len()], &[w.n()]));
    }
    let mut total = 0.0;
    for &ci in &c.0 {
        total += *log_pi.get(ci).ok_or(Error::OutOfRange {
            index: ci,
            limit: log_pi.len(),
        })?;
    }
    for (i, j, wij) in w.pairs() {
        if c.0[i] == c.0[j] {
            total += 2.0 * wij;
        }
    }
    Ok(total)
}

/// Calls `f` on every assignment of `n` samples to `k` clusters.
fn for_each_assignment(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let count = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if count > MAX_ENUMERATION as u128 {
        return Err(Error::TooLarge(format!("{k}^{n} assignments")));
    }
    let mut c = vec![0usize; n];
    loop {
        f(&c)?;
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(());
            }
            c[pos] += 1;
            if c[pos] < k {
                break;
            }
            c[pos] = 0;
            pos += 1;
        }
    }
}

/// `ln Ω(π)` by summing over all `K^n` assignments.
pub fn brute_force_log_normalizer(w: &PairwiseWeights, log_pi: &[f64]) -> Result<f64> {
    let k = log_pi.len();
    let mut terms = Vec::new();
    for_each_assignment(w.n(), k, |c| {
        terms.push(log_unnormalized_prior(&Assignment(c.to_vec()), w, log_pi)?);
        Ok(())
    })?;
    Ok(lse(&terms))
}

/// `Ω(π) = Σ_c exp(ln p̃(c | W))` by exhaustive enumeration.
pub fn brute_force_normalizer(w: &PairwiseWeights, log_pi: &[f64]) -> Result<f64> {
    if log_pi.is_empty() {
        return Err(Error::Contract("no clusters".into()));
    }
    let mut total = 0.0;
    for_each_assignment(w.n(), log_pi.len(), |c| {
        total += log_unnormalized_prior(&Assignment(c.to_vec()), w, log_pi)?.exp();
        Ok(())
    })?;
    Ok(total)
}

/// Exact posterior over joint assignments of a tiny data set.
#[derive(Clone, Debug)]
pub struct PosteriorTable {
    pub assignments: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
    /// `ln p(X | W)`.
    pub log_evidence: f64,
    /// `ln p(x_i | c_i = k)`, `n × K`.
    pub log_marginals: Vec<Vec<f64>>,
}

/// Largest data set the exact posterior accepts.
pub const POSTERIOR_MAX_N: usize = 3;

/// `p(c | X, W)` and `ln p(X | W)` for `n ≤ 3` samples with a
/// one-dimensional latent space. The latent integrals
/// `p(x_i | k) = ∫ p(x_i | z) N(z | μ_k, σ²_k) dz` use Gauss–Hermite
/// quadrature with `nodes` points.
pub fn brute_force_conditional_posterior(
    x: &Tensor,
    model: &Model,
    mixture: &MixtureParams,
    w: &PairwiseWeights,
    nodes: usize,
) -> Result<PosteriorTable> {
    let (n, _) = x.dims2()?;
    if n > POSTERIOR_MAX_N || mixture.latent_dim() != 1 || model.spec().latent_dim != 1 {
        return Err(Error::TooLarge(format!(
            "exact posterior needs n ≤ {POSTERIOR_MAX_N} and a 1-d latent space (n = {n}, D = {})",
            mixture.latent_dim()
        )));
    }
    if w.n() != n {
        return Err(Error::shape("brute_force_conditional_posterior", &[n], &[w.n()]));
    }
    if nodes < 64 {
        return Err(Error::Contract(format!("at least 64 quadrature nodes required, got {nodes}")));
    }
    let k = mixture.k();
    let gh = GaussHermite::new(nodes)?;
    let mut log_marginals = vec![vec![0.0; k]; n];
    for c in 0..k {
        let mean = mixture.means.at(c, 0);
        let sd = (0.5 * mixture.log_vars.at(c, 0)).exp();
        let (pts, lw) = gh.normal_rule(mean, sd);
        let z = Tensor::matrix(pts.len(), 1, pts)?;
        let dec = model.decode(&z)?;
        for (i, row) in log_marginals.iter_mut().enumerate() {
            let terms: Vec<f64> = (0..nodes)
                .map(|q| Ok(lw[q] + observation_log_likelihood(x.row_slice(i), &dec, q)?))
                .collect::<Result<_>>()?;
            row[c] = lse(&terms);
        }
    }

    let log_pi = mixture.log_weights.data();
    let log_omega = brute_force_log_normalizer(w, log_pi)?;
    let mut assignments = Vec::new();
    let mut joint = Vec::new();
    for_each_assignment(n, k, |c| {
        let prior = log_unnormalized_prior(&Assignment(c.to_vec()), w, log_pi)? - log_omega;
        let lik: f64 = c.iter().enumerate().map(|(i, &ci)| log_marginals[i][ci]).sum();
        assignments.push(c.to_vec());
        joint.push(prior + lik);
        Ok(())
    })?;
    let log_evidence = lse(&joint);
    let probs = joint.iter().map(|j| (j - log_evidence).exp()).collect();
    Ok(PosteriorTable {
        assignments,
        probs,
        log_evidence,
        log_marginals,
    })
}

/// Checks that a dense batch slice is symmetric with a zero diagonal.
fn check_batch_weights(wb: &Tensor) -> Result<usize> {
    let (b, b2) = wb.dims2()?;
    if b != b2 {
        return Err(Error::shape("pairwise_penalty", &[b, b], wb.shape()));
    }
    for i in 0..b {
        if wb.at(i, i) != 0.0 {
            return Err(Error::Contract(format!("batch weights have nonzero diagonal at {i}")));
        }
        for j in 0..i {
            if wb.at(i, j) != wb.at(j, i) {
                return Err(Error::Contract(format!("batch weights asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(b)
}

/// `Σ_{i≠j} Σ_k P_ik P_jk W_ij` as a graph node, differentiable in `P`.
pub fn pairwise_penalty_graph(g: &mut Graph, p: Var, wb: &Tensor) -> Result<Var> {
    let b = check_batch_weights(wb)?;
    if g.value(p).rows() != b {
        return Err(Error::shape("pairwise_penalty", g.value(p).shape(), wb.shape()));
    }
    let pt = g.transpose(p)?;
    let agree = g.matmul(p, pt)?;
    let wv = g.constant(wb.clone());
    let weighted = g.mul(agree, wv)?;
    g.sum(weighted)
}

/// Value of the batch pairwise penalty for responsibilities `P` (`B×K`).
pub fn pairwise_penalty(p: &Tensor, wb: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let pv = g.constant(p.clone());
    let out = pairwise_penalty_graph(&mut g, pv, wb)?;
    g.scalar(out)
}

/// Dense `B×B` slice of `W` for the samples `indices`.
pub fn gather_batch_weights(w: &PairwiseWeights, indices: &[usize]) -> Result<Tensor> {
    let b = indices.len();
    let mut pos = HashMap::with_capacity(b);
    for (a, &i) in indices.iter().enumerate() {
        if i >= w.n() {
            return Err(Error::OutOfRange { index: i, limit: w.n() });
        }
        if pos.insert(i, a).is_some() {
            return Err(Error::Contract(format!("duplicate index {i} in batch")));
        }
    }
    let mut dense = vec![0.0; b * b];
    for (i, j, wij) in w.pairs() {
        if let (Some(&a), Some(&c)) = (pos.get(&i), pos.get(&j)) {
            dense[a * b + c] = wij;
            dense[c * b + a] = wij;
        }
    }
    Tensor::matrix(b, b, dense)
}
