//! Clustering accuracy (optimal one-to-one label matching), normalized
//! mutual information and the adjusted Rand index.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Counts `n_ij` of predicted cluster `i` against true class `j`. Labels
/// are compacted to `0..K` in ascending order of their original values.
#[derive(Clone, Debug, PartialEq)]
pub struct Contingency {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let ids: BTreeMap<usize, usize> = labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::shape("contingency", &[pred.len()], &[truth.len()]));
        }
        let (p, kp) = compact(pred);
        let (t, kt) = compact(truth);
        let mut counts = vec![vec![0u64; kt]; kp];
        for (&a, &b) in p.iter().zip(&t) {
            counts[a][b] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..kt).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Contingency {
            counts,
            row_sums,
            col_sums,
            n: pred.len() as u64,
        })
    }
}

/// Minimum-cost assignment of rows to columns. Rectangular inputs are padded
/// with zero-cost dummies; the result maps each row to a column, or `None`
/// when the row was matched to padding.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<Option<usize>>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    for r in cost {
        if r.len() != cols {
            return Err(Error::shape("hungarian", &[cols], &[r.len()]));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "hungarian cost matrix".into(),
            });
        }
    }
    let n = rows.max(cols);
    if n == 0 {
        return Ok(vec![]);
    }
    let c = |i: usize, j: usize| if i < rows && j < cols { cost[i][j] } else { 0.0 };

    // Shortest augmenting paths with potentials, 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            assignment[i - 1] = Some(j - 1);
        }
    }
    Ok(assignment)
}

/// Fraction of samples correctly labelled under the best one-to-one mapping
/// of predicted clusters to true classes.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = Contingency::new(pred, truth)?;
    if ct.n == 0 {
        return Ok(0.0);
    }
    let cost: Vec<Vec<f64>> = ct.counts.iter().map(|r| r.iter().map(|&c| -(c as f64)).collect()).collect();
    let matched: u64 = hungarian(&cost)?
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| ct.counts[i][j]))
        .sum();
    Ok(matched as f64 / ct.n as f64)
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(pred; true) / sqrt(H(pred) H(true))` with natural logs; zero when
/// either partition has zero entropy.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = Contingency::new(pred, truth)?;
    if ct.n == 0 {
        return Ok(0.0);
    }
    let n = ct.n as f64;
    let hp = entropy(&ct.row_sums, n);
    let ht = entropy(&ct.col_sums, n);
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    // same partition up to relabeling; skips rounding in the ratio
    let one_per_row = ct.counts.iter().all(|r| r.iter().filter(|&&c| c > 0).count() == 1);
    if one_per_row && ct.row_sums.len() == ct.col_sums.len() {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in ct.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (ct.row_sums[i] as f64 * ct.col_sums[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

fn comb2(x: u64) -> i128 {
    let x = x as i128;
    x * (x - 1) / 2
}

/// Adjusted Rand index, from exact integer pair counts.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = Contingency::new(pred, truth)?;
    let index: i128 = ct.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let a: i128 = ct.row_sums.iter().map(|&c| comb2(c)).sum();
    let b: i128 = ct.col_sums.iter().map(|&c| comb2(c)).sum();
    let total = comb2(ct.n);
    if total == 0 {
        return Ok(1.0);
    }
    // (index - ab/T) / ((a+b)/2 - ab/T), scaled by 2T
    let num = 2 * (index * total - a * b);
    let den = (a + b) * total - 2 * a * b;
    if den == 0 {
        // both partitions trivial in the same way
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Accuracy, NMI and ARI in one go.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

pub fn score(pred: &[usize], truth: &[usize]) -> Result<Scores> {
    Ok(Scores {
        acc: accuracy(pred, truth)?,
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
    })
}
