//! Jensen-Shannon MI objective between node (local) and graph (global)
//! representations.
//!
//! Scores are `T(x, y) = localProj(x) · globalProj(y)`. Every node is paired
//! positively with its own graph and negatively with every other graph of the
//! batch, and
//!
//! ```text
//! L_r = mean_pos sp(-T) + mean_neg sp(T)
//! ```

use rand::Rng;
use thiserror::Error;

use crate::encoder::BatchEncoding;
use crate::nn::TwoLayer;
use crate::tensor::{Bindings, ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, PartialEq)]
pub enum MiError {
    #[error("MI loss needs at least 2 graphs per batch, got {0}")]
    TooFewGraphs(usize),
    #[error("batch has no nodes")]
    NoNodes,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Local and global projectors, each `in → d_mi → d_mi` with one hidden ReLU.
#[derive(Debug, Clone, Copy)]
pub struct Discriminator {
    pub local: TwoLayer,
    pub global: TwoLayer,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, in_dim: usize, d_mi: usize, rng: &mut impl Rng) -> Self {
        Self {
            local: TwoLayer::new(store, "disc.local", (in_dim, d_mi, d_mi), rng),
            global: TwoLayer::new(store, "disc.global", (in_dim, d_mi, d_mi), rng),
        }
    }

    pub fn score_dim(&self) -> usize {
        self.local.out_dim()
    }

    /// Score matrix `localProj(nodes) · globalProj(graphs)ᵀ`.
    pub fn scores(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        nodes: Var,
        graphs: Var,
    ) -> Result<Var, TensorError> {
        let l = self.local.forward(tape, params, nodes)?;
        let g = self.global.forward(tape, params, graphs)?;
        let gt = tape.transpose(g)?;
        tape.matmul(l, gt)
    }
}

/// `T(local, global)` for a single pair of representation rows.
pub fn discriminator_score(
    store: &ParamStore,
    disc: &Discriminator,
    local: &[f64],
    global: &[f64],
) -> Result<f64, TensorError> {
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let l = tape.constant(Tensor::matrix(1, local.len(), local.to_vec())?);
    let g = tape.constant(Tensor::matrix(1, global.len(), global.to_vec())?);
    let s = disc.scores(&mut tape, &p, l, g)?;
    Ok(tape.value(s).item())
}

/// Positive-pair indicator: `mask[i][j] = 1` iff node `i` belongs to graph `j`.
fn positive_mask(segment_ids: &[usize], graphs: usize) -> Tensor {
    let mut m = Tensor::zeros(&[segment_ids.len(), graphs]);
    for (i, &g) in segment_ids.iter().enumerate() {
        m.data_mut()[i * graphs + g] = 1.0;
    }
    m
}

/// `L_r` from precomputed scores (`nodes × graphs`) and node memberships.
pub fn js_loss_from_scores(
    tape: &mut Tape,
    scores: Var,
    segment_ids: &[usize],
    graphs: usize,
) -> Result<Var, MiError> {
    if graphs < 2 {
        return Err(MiError::TooFewGraphs(graphs));
    }
    let n = segment_ids.len();
    if n == 0 {
        return Err(MiError::NoNodes);
    }
    let pos = positive_mask(segment_ids, graphs);
    let neg = Tensor::new(
        pos.shape().to_vec(),
        pos.data().iter().map(|v| 1.0 - v).collect(),
    )?;
    let pos = tape.constant(pos);
    let neg = tape.constant(neg);

    let neg_scores = tape.scale(scores, -1.0);
    let sp_pos = tape.softplus(neg_scores);
    let sp_pos = tape.mul(sp_pos, pos)?;
    let pos_term = tape.sum(sp_pos);
    let pos_term = tape.scale(pos_term, 1.0 / n as f64);

    let sp_neg = tape.softplus(scores);
    let sp_neg = tape.mul(sp_neg, neg)?;
    let neg_term = tape.sum(sp_neg);
    let neg_term = tape.scale(neg_term, 1.0 / (n * (graphs - 1)) as f64);

    Ok(tape.add(pos_term, neg_term)?)
}

/// `L_r` for a batch encoding.
pub fn js_mi_loss(
    tape: &mut Tape,
    params: &Bindings,
    disc: &Discriminator,
    encoding: &BatchEncoding,
) -> Result<Var, MiError> {
    if encoding.graph_count < 2 {
        return Err(MiError::TooFewGraphs(encoding.graph_count));
    }
    let s = disc.scores(tape, params, encoding.node_repr, encoding.graph_repr)?;
    js_loss_from_scores(tape, s, &encoding.segment_ids, encoding.graph_count)
}
