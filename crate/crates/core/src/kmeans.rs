//! Lloyd's k-means with k-means++ seeding and restarts.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 10,
            max_iters: 100,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub centroids: Tensor,
    pub labels: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub distortion: f64,
    /// Final distortion of every restart, in the order they ran.
    pub restart_distortions: Vec<f64>,
    /// Index of the restart that was kept.
    pub best_restart: usize,
    /// Empty clusters re-seeded across all restarts.
    pub reseeds: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(rows: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![rows[rng.gen_range(0..rows.len())].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point already coincides with a centroid
            Err(_) => rng.gen_range(0..rows.len()),
        };
        centroids.push(rows[next].to_vec());
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Single Lloyd run from k-means++ seeds. Returns centroids, labels,
/// distortion and the number of re-seeded empty clusters.
fn lloyd<R: Rng + ?Sized>(rows: &[&[f64]], k: usize, max_iters: usize, rng: &mut R) -> (Vec<Vec<f64>>, Vec<usize>, f64, usize) {
    let dim = rows[0].len();
    let mut centroids = seed_plus_plus(rows, k, rng);
    let mut labels = vec![usize::MAX; rows.len()];
    let mut reseeds = 0;
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let (c, _) = nearest(r, &centroids);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(r.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // move the empty centroid onto the worst-served point
                let far = (0..rows.len())
                    .max_by(|&a, &b| {
                        let da = sq_dist(rows[a], &centroids[labels[a]]);
                        let db = sq_dist(rows[b], &centroids[labels[b]]);
                        da.total_cmp(&db)
                    })
                    .unwrap_or(0);
                centroids[c] = rows[far].to_vec();
                labels[far] = c;
                reseeds += 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for (i, r) in rows.iter().enumerate() {
        labels[i] = nearest(r, &centroids).0;
    }
    let distortion = rows.iter().zip(&labels).map(|(r, &l)| sq_dist(r, &centroids[l])).sum();
    (centroids, labels, distortion, reseeds)
}

/// Best of `cfg.restarts` Lloyd runs by distortion; ties keep the earliest.
pub fn kmeans<R: Rng + ?Sized>(data: &Tensor, k: usize, cfg: KMeansConfig, rng: &mut R) -> Result<KMeansResult> {
    let (n, dim) = data.dims2()?;
    if k == 0 || k > n {
        return Err(Error::Contract(format!("k-means needs 1 <= k <= n, got k={k}, n={n}")));
    }
    if cfg.restarts == 0 {
        return Err(Error::Config("k-means needs at least one restart".into()));
    }
    if !data.is_finite() {
        return Err(Error::NonFinite {
            what: "k-means input".into(),
        });
    }
    let rows: Vec<&[f64]> = (0..n).map(|i| data.row_slice(i)).collect();
    let mut best: Option<(Vec<Vec<f64>>, Vec<usize>, f64)> = None;
    let mut restart_distortions = Vec::with_capacity(cfg.restarts);
    let mut best_restart = 0;
    let mut reseeds = 0;
    for r in 0..cfg.restarts {
        let (c, l, d, s) = lloyd(&rows, k, cfg.max_iters, rng);
        restart_distortions.push(d);
        reseeds += s;
        if best.as_ref().is_none_or(|b| d < b.2) {
            best = Some((c, l, d));
            best_restart = r;
        }
    }
    let (c, labels, distortion) = best.expect("at least one restart");
    log::debug!("k-means distortions per restart: {restart_distortions:?}");
    Ok(KMeansResult {
        centroids: Tensor::matrix(k, dim, c.concat())?,
        labels,
        distortion,
        restart_distortions,
        best_restart,
        reseeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separated_blobs_are_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let centers = [(-10.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
        let mut data = Vec::new();
        for i in 0..300 {
            let (cx, cy) = centers[i % 3];
            data.push(cx + rng.gen_range(-0.5..0.5));
            data.push(cy + rng.gen_range(-0.5..0.5));
        }
        let x = Tensor::matrix(300, 2, data).unwrap();
        let res = kmeans(&x, 3, KMeansConfig::default(), &mut rng).unwrap();
        for (cx, cy) in centers {
            let hit = (0..3).any(|k| (res.centroids.at(k, 0) - cx).abs() < 0.1 && (res.centroids.at(k, 1) - cy).abs() < 0.1);
            assert!(hit, "no centroid near ({cx},{cy}): {:?}", res.centroids);
        }
        let min = res.restart_distortions.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(res.distortion, min);
        assert_eq!(res.restart_distortions[res.best_restart], min);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let x = Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let res = kmeans(&x, 1, KMeansConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(res.centroids.data(), &[3.0]);
        assert_eq!(res.labels, vec![0; 4]);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let x = Tensor::matrix(5, 1, vec![0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let res = kmeans(&x, 3, KMeansConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(res.labels.len(), 5);
        assert!(res.distortion.is_finite());
    }

    #[test]
    fn rejects_bad_k() {
        let x = Tensor::zeros(&[2, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(kmeans(&x, 0, KMeansConfig::default(), &mut rng).is_err());
        assert!(kmeans(&x, 3, KMeansConfig::default(), &mut rng).is_err());
    }
}
