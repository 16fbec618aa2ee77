use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::Tensor;

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum KMeansError {
    #[error("k-means needs at least one cluster")]
    NoClusters,
    #[error("k-means with {clusters} clusters on {points} points")]
    TooFewPoints { points: usize, clusters: usize },
    #[error("k-means input is not a finite matrix")]
    BadInput,
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// `c × d`
    pub centroids: Tensor,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations, best of `restarts` by
/// inertia. Rows of `points` are the samples.
pub fn kmeans(
    points: &Tensor,
    clusters: usize,
    seed: u64,
    restarts: usize,
) -> Result<KMeansResult, KMeansError> {
    if clusters == 0 {
        return Err(KMeansError::NoClusters);
    }
    if points.shape().len() != 2 || !points.is_finite() {
        return Err(KMeansError::BadInput);
    }
    let n = points.rows();
    if n < clusters {
        return Err(KMeansError::TooFewPoints {
            points: n,
            clusters,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let init = plus_plus(points, clusters, &mut rng);
        let run = lloyd(points, init);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus(points: &Tensor, clusters: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.rows();
    let mut centers = vec![points.row(rng.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), &centers[0]))
        .collect();
    while centers.len() < clusters {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            // Round-off can walk past the last positive weight.
            while d2[chosen] == 0.0 && chosen > 0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

/// Nearest center for each row (lowest index on ties) and the total squared
/// distance.
fn assign(points: &Tensor, centers: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let row = points.row(i);
        let mut best = (0, f64::INFINITY);
        for (t, c) in centers.iter().enumerate() {
            let d = sq_dist(row, c);
            if d < best.1 {
                best = (t, d);
            }
        }
        *label = best.0;
        inertia += best.1;
    }
    inertia
}

fn lloyd(points: &Tensor, mut centers: Vec<Vec<f64>>) -> KMeansResult {
    let (n, d) = (points.rows(), points.cols());
    let c = centers.len();
    let mut labels = vec![usize::MAX; n];
    let mut next = vec![0; n];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let inertia = assign(points, &centers, &mut next);
        history.push(inertia);
        if next == labels {
            break;
        }
        labels.copy_from_slice(&next);
        let mut sums = vec![vec![0.0; d]; c];
        let mut counts = vec![0usize; c];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for t in 0..c {
            // An empty cluster keeps its previous center.
            if counts[t] > 0 {
                centers[t] = sums[t].iter().map(|s| s / counts[t] as f64).collect();
            }
        }
    }
    let inertia = *history.last().expect("one iteration");
    if labels[0] == usize::MAX {
        labels = next;
    }
    KMeansResult {
        labels,
        centroids: Tensor::matrix(c, d, centers.concat()).expect("c × d"),
        inertia,
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Tensor {
        Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![10.0, 10.0],
            vec![10.1, 10.0],
            vec![10.0, 10.1],
        ])
        .unwrap()
    }

    #[test]
    fn separates_blobs() {
        let r = kmeans(&blobs(), 2, 0, KMEANS_RESTARTS).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[0], r.labels[2]);
        assert_eq!(r.labels[3], r.labels[4]);
        assert_ne!(r.labels[0], r.labels[3]);
    }

    #[test]
    fn one_cluster_is_the_mean() {
        let r = kmeans(&blobs(), 1, 5, 1).unwrap();
        let m = r.centroids.row(0);
        assert!((m[0] - 30.2 / 6.0).abs() < 1e-12);
        assert!((m[1] - 30.2 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn inertia_never_increases() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let x = (i as f64 * 0.37).sin() * 5.0;
                vec![x, (i as f64 * 1.3).cos() * 3.0 + x * 0.2]
            })
            .collect();
        let pts = Tensor::from_rows(&pts).unwrap();
        for seed in 0..10 {
            let r = kmeans(&pts, 4, seed, 1).unwrap();
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0], "{:?}", r.history);
            }
        }
    }

    #[test]
    fn too_few_points() {
        assert_eq!(
            kmeans(&blobs(), 7, 0, 1).unwrap_err(),
            KMeansError::TooFewPoints {
                points: 6,
                clusters: 7
            }
        );
    }

    #[test]
    fn seeded_runs_repeat() {
        let a = kmeans(&blobs(), 3, 42, 3).unwrap();
        let b = kmeans(&blobs(), 3, 42, 3).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.centroids, b.centroids);
    }
}
