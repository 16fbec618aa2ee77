use thiserror::Error;

use super::kmeans::{kmeans, KMeansError, KMEANS_RESTARTS};
use super::GramMatrix;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("affinity matrix has no nonzero rows")]
    AllZero,
    #[error("{nonzero} nonzero-degree rows cannot form {clusters} clusters")]
    TooFewRows { nonzero: usize, clusters: usize },
    #[error(transparent)]
    KMeans(#[from] KMeansError),
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// `n × n`, column `k` is the eigenvector of `values[k]`.
    pub vectors: Tensor,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition of the symmetric `n × n` row-major `a`.
pub fn jacobi_eigen(a: &Tensor) -> Eigen {
    let n = a.rows();
    assert_eq!(n, a.cols(), "jacobi_eigen needs a square matrix");
    let mut m = a.data().to_vec();
    let mut v = Tensor::identity(n).into_data();
    let total: f64 = m.iter().map(|x| x * x).sum();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off <= 1e-30 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let tau = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * kp - s * kq;
                    m[k * n + q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * pk - s * qk;
                    m[q * n + k] = s * pk + c * qk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let (kp, kq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * kp - s * kq;
                    v[k * n + q] = s * kp + c * kq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + dst] = v[k * n + src];
        }
    }
    Eigen {
        values,
        vectors: Tensor::matrix(n, n, vectors).expect("n × n"),
    }
}

/// Normalized spectral clustering of an affinity matrix.
///
/// Negative entries are clipped to zero. Rows with zero degree take the label
/// of the nonzero row nearest to them in affinity space.
pub fn spectral_clustering(
    s: &GramMatrix,
    clusters: usize,
    seed: u64,
) -> Result<Vec<usize>, SpectralError> {
    let n = s.len();
    let clipped: Vec<f64> = s.values().iter().map(|&x| x.max(0.0)).collect();
    let degree: Vec<f64> = (0..n)
        .map(|i| clipped[i * n..(i + 1) * n].iter().sum())
        .collect();
    let active: Vec<usize> = (0..n).filter(|&i| degree[i] > 0.0).collect();
    if active.is_empty() {
        return Err(SpectralError::AllZero);
    }
    if active.len() < clusters {
        return Err(SpectralError::TooFewRows {
            nonzero: active.len(),
            clusters,
        });
    }
    let m = active.len();
    let mut norm = vec![0.0; m * m];
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            norm[a * m + b] = clipped[i * n + j] / (degree[i].sqrt() * degree[j].sqrt());
        }
    }
    let eig = jacobi_eigen(&Tensor::matrix(m, m, norm).expect("m × m"));
    let mut rows = vec![0.0; m * clusters];
    for a in 0..m {
        let row = &mut rows[a * clusters..(a + 1) * clusters];
        for (k, r) in row.iter_mut().enumerate() {
            *r = eig.vectors.get(a, k);
        }
        let len = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 0.0 {
            row.iter_mut().for_each(|x| *x /= len);
        }
    }
    let km = kmeans(
        &Tensor::matrix(m, clusters, rows).expect("m × c"),
        clusters,
        seed,
        KMEANS_RESTARTS,
    )?;

    let mut labels = vec![0; n];
    for (a, &i) in active.iter().enumerate() {
        labels[i] = km.labels[a];
    }
    for i in (0..n).filter(|&i| degree[i] == 0.0) {
        // A clipped zero-degree row is the zero vector, so its nearest
        // nonzero row is the one with the smallest norm.
        let nearest = active
            .iter()
            .copied()
            .min_by(|&x, &y| {
                let nx: f64 = clipped[x * n..(x + 1) * n].iter().map(|v| v * v).sum();
                let ny: f64 = clipped[y * n..(y + 1) * n].iter().map(|v| v * v).sum();
                nx.total_cmp(&ny).then(x.cmp(&y))
            })
            .expect("active is nonempty");
        labels[i] = labels[nearest];
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.gen_range(-1.0..1.0);
                a[i * n + j] = x;
                a[j * n + i] = x;
            }
        }
        Tensor::matrix(n, n, a).unwrap()
    }

    #[test]
    fn jacobi_reconstructs_random_matrices() {
        let n = 50;
        for seed in 0..3 {
            let a = random_symmetric(n, seed);
            let e = jacobi_eigen(&a);
            let mut err = 0.0;
            let mut norm = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let r: f64 = (0..n)
                        .map(|k| e.vectors.get(i, k) * e.values[k] * e.vectors.get(j, k))
                        .sum();
                    err += (r - a.get(i, j)).powi(2);
                    norm += a.get(i, j).powi(2);
                }
            }
            assert!(
                (err / norm).sqrt() < 1e-8,
                "relative error {}",
                (err / norm).sqrt()
            );
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn jacobi_diagonal_is_sorted() {
        let a = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let e = jacobi_eigen(&a);
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        assert_eq!(e.vectors.get(1, 0), 1.0);
    }

    #[test]
    fn recovers_blocks() {
        let n = 6;
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if (i < 3) == (j < 3) {
                    s[i * n + j] = 1.0;
                }
            }
        }
        let g = GramMatrix::new(n, s, false);
        let labels = spectral_clustering(&g, 2, 0).unwrap();
        assert!(labels[..3].iter().all(|&l| l == labels[0]));
        assert!(labels[3..].iter().all(|&l| l == labels[3]));
        assert_ne!(labels[0], labels[3]);
    }

    #[test]
    fn identity_split_is_deterministic() {
        let g = GramMatrix::new(4, Tensor::identity(4).into_data(), true);
        let a = spectral_clustering(&g, 2, 7).unwrap();
        let b = spectral_clustering(&g, 2, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_row_follows_nearest_row() {
        let s = vec![
            1.0, 0.9, 0.0, 0.0, //
            0.9, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.5, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        let labels = spectral_clustering(&GramMatrix::new(4, s, false), 2, 0).unwrap();
        assert_eq!(labels[3], labels[2]);
        assert_ne!(labels[0], labels[2]);
    }
}
