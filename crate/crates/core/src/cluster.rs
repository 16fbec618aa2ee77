//! Cluster projector, Student-t soft assignment, sharpened targets and the
//! KL clustering loss.

use rand::Rng;
use thiserror::Error;

use crate::baselines::{kmeans, KMeansError, KMEANS_RESTARTS};
use crate::nn::TwoLayer;
use crate::tensor::{Bindings, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Floor applied to `q` inside the log of the KL loss.
pub const Q_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cluster {0} has zero total assignment in this batch")]
    EmptyCluster(usize),
    #[error("{distinct} distinct embeddings cannot seed {clusters} centers")]
    TooFewDistinct { distinct: usize, clusters: usize },
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Projector `K·d_h → d_z` plus trainable centers `c × d_z`.
#[derive(Debug, Clone, Copy)]
pub struct ClusterHead {
    pub projector: TwoLayer,
    pub centers: ParamId,
    pub clusters: usize,
}

impl ClusterHead {
    pub fn new(
        store: &mut ParamStore,
        dims: (usize, usize, usize),
        clusters: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let projector = TwoLayer::new(store, "cluster.proj", dims, rng);
        let centers = store.add("cluster.centers", Tensor::zeros(&[clusters, dims.2]));
        Self {
            projector,
            centers,
            clusters,
        }
    }

    pub fn z_dim(&self) -> usize {
        self.projector.out_dim()
    }

    /// `Z = f(graph_repr)`
    pub fn project(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        graph_repr: Var,
    ) -> Result<Var, TensorError> {
        self.projector.forward(tape, params, graph_repr)
    }

    /// `Q` for the embeddings `z` against the current centers.
    pub fn assign(&self, tape: &mut Tape, params: &Bindings, z: Var) -> Result<Var, TensorError> {
        soft_assign(tape, z, params.get(self.centers))
    }
}

/// Student-t (one degree of freedom) soft assignment, rows normalized.
pub fn soft_assign(tape: &mut Tape, z: Var, centers: Var) -> Result<Var, TensorError> {
    let d = tape.sq_dist(z, centers)?;
    let d1 = tape.add_scalar(d, 1.0);
    let kernel = tape.recip(d1);
    let norm = tape.row_sum(kernel)?;
    let inv = tape.recip(norm);
    tape.broadcast_mul_col(kernel, inv)
}

/// [`soft_assign`] on plain values.
pub fn soft_assign_values(z: &Tensor, centers: &Tensor) -> Result<Tensor, TensorError> {
    let mut tape = Tape::new();
    let z = tape.constant(z.clone());
    let c = tape.constant(centers.clone());
    let q = soft_assign(&mut tape, z, c)?;
    Ok(tape.value(q).clone())
}

/// Sharpened target `p_jt ∝ q_jt² / f_t` with `f_t = Σ_j q_jt`.
pub fn target_distribution(q: &Tensor) -> Result<Tensor, ClusterError> {
    let (n, c) = (q.rows(), q.cols());
    let mut freq = vec![0.0; c];
    for j in 0..n {
        for (f, v) in freq.iter_mut().zip(q.row(j)) {
            *f += v;
        }
    }
    if let Some(t) = freq.iter().position(|&f| f <= 0.0) {
        return Err(ClusterError::EmptyCluster(t));
    }
    let mut p = Vec::with_capacity(n * c);
    for j in 0..n {
        let row: Vec<f64> = q.row(j).iter().zip(&freq).map(|(v, f)| v * v / f).collect();
        let s: f64 = row.iter().sum();
        p.extend(row.into_iter().map(|v| v / s));
    }
    Ok(Tensor::matrix(n, c, p)?)
}

/// `Σ p·log p` with `0·log 0 = 0`.
fn neg_entropy(p: &Tensor) -> f64 {
    p.data()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum()
}

/// `KL(P‖Q) = Σ p·log(p/q)` with `P` held constant.
pub fn kl_loss(tape: &mut Tape, p: &Tensor, q: Var) -> Result<Var, TensorError> {
    let pv = tape.constant(p.clone());
    let q = tape.clamp_min(q, Q_FLOOR);
    let log_q = tape.log(q);
    let cross = tape.mul(pv, log_q)?;
    let cross = tape.sum(cross);
    let neg = tape.scale(cross, -1.0);
    Ok(tape.add_scalar(neg, neg_entropy(p)))
}

/// [`kl_loss`] on plain values, summed as `p·ln(p/q) − p + q` per entry.
/// Rows of `P` and `Q` both sum to one, so the extra terms cancel in total,
/// and each entry is non-negative; the floor only absorbs rounding when
/// `p ≈ q`.
pub fn kl_value(p: &Tensor, q: &Tensor) -> f64 {
    p.data()
        .iter()
        .zip(q.data())
        .map(|(&a, &b)| {
            let b = b.max(Q_FLOOR);
            let cross = if a > 0.0 { a * (a / b).ln() } else { 0.0 };
            (cross - a + b).max(0.0)
        })
        .sum()
}

/// Row-wise argmax, lowest index on ties.
pub fn hard_labels(q: &Tensor) -> Vec<usize> {
    (0..q.rows())
        .map(|j| {
            let mut best = 0;
            for (t, &v) in q.row(j).iter().enumerate() {
                if v > q.row(j)[best] {
                    best = t;
                }
            }
            best
        })
        .collect()
}

/// k-means centroids of `z` (best of 10 restarts), used to seed the centers.
pub fn init_centers(z: &Tensor, clusters: usize, seed: u64) -> Result<Tensor, ClusterError> {
    let mut rows: Vec<&[f64]> = (0..z.rows()).map(|i| z.row(i)).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(*b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows.dedup();
    if rows.len() < clusters {
        return Err(ClusterError::TooFewDistinct {
            distinct: rows.len(),
            clusters,
        });
    }
    Ok(kmeans(z, clusters, seed, KMEANS_RESTARTS)?.centroids)
}
