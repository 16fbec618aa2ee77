//! GIN encoder.
//!
//! Layer `k` computes `h_v ← MLP_k(h_v + Σ_{u∈N(v)} h_u)` (GIN with a fixed
//! zero epsilon). Node representations concatenate every layer's output;
//! graph representations are the per-graph sum of node representations.

use rand::Rng;
use thiserror::Error;

use crate::graph::{DatasetFeatures, FeatureMatrix, Graph, GraphDataset};
use crate::nn::Linear;
use crate::tensor::{Bindings, ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("graph {graph}: {found} feature rows for {expected} nodes")]
    FeatureRows {
        graph: usize,
        expected: usize,
        found: usize,
    },
    #[error("feature dimension {found} does not match encoder input {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Several graphs flattened into one disjoint union.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    features: Tensor,
    /// Directed message edges: each undirected edge appears in both directions.
    src: Vec<usize>,
    dst: Vec<usize>,
    segment_ids: Vec<usize>,
    graph_count: usize,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph], features: &[&FeatureMatrix]) -> Result<Self, EncoderError> {
        if graphs.is_empty() {
            return Err(EncoderError::EmptyBatch);
        }
        let dim = features.first().map_or(0, |f| f.dim());
        let total: usize = graphs.iter().map(|g| g.node_count()).sum();
        let mut values = Vec::with_capacity(total * dim);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut segment_ids = Vec::with_capacity(total);
        let mut offset = 0;
        for (gi, (g, f)) in graphs.iter().zip(features).enumerate() {
            if f.rows() != g.node_count() {
                return Err(EncoderError::FeatureRows {
                    graph: gi,
                    expected: g.node_count(),
                    found: f.rows(),
                });
            }
            if f.dim() != dim {
                return Err(EncoderError::FeatureDim {
                    expected: dim,
                    found: f.dim(),
                });
            }
            values.extend_from_slice(f.values());
            for &(u, v) in g.edges() {
                src.push(u + offset);
                dst.push(v + offset);
                src.push(v + offset);
                dst.push(u + offset);
            }
            segment_ids.extend(std::iter::repeat_n(gi, g.node_count()));
            offset += g.node_count();
        }
        Ok(Self {
            features: Tensor::matrix(total, dim, values)?,
            src,
            dst,
            segment_ids,
            graph_count: graphs.len(),
        })
    }

    /// Batch of the dataset graphs at `indices`, in that order.
    pub fn from_dataset(
        dataset: &GraphDataset,
        features: &DatasetFeatures,
        indices: &[usize],
    ) -> Result<Self, EncoderError> {
        let graphs: Vec<&Graph> = indices.iter().map(|&i| &dataset.graphs[i]).collect();
        let feats: Vec<&FeatureMatrix> = indices.iter().map(|&i| &features.per_graph[i]).collect();
        Self::new(&graphs, &feats)
    }

    pub fn node_count(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn graph_count(&self) -> usize {
        self.graph_count
    }

    pub fn segment_ids(&self) -> &[usize] {
        &self.segment_ids
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// One GIN layer: a two-layer MLP with ReLU after each affine map.
#[derive(Debug, Clone, Copy)]
pub struct GinLayer {
    pub lin1: Linear,
    pub lin2: Linear,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    input_dim: usize,
    hidden_dim: usize,
    layers: Vec<GinLayer>,
}

/// Output of [`Encoder::forward`].
#[derive(Debug, Clone)]
pub struct BatchEncoding {
    /// `total_nodes × K·d_h`
    pub node_repr: Var,
    /// `graph_count × K·d_h`
    pub graph_repr: Var,
    pub segment_ids: Vec<usize>,
    pub graph_count: usize,
}

/// `h_v + Σ_{u∈N(v)} h_u` for every node of the batch.
pub fn aggregate(tape: &mut Tape, h: Var, batch: &GraphBatch) -> Result<Var, TensorError> {
    if batch.src.is_empty() {
        return Ok(h);
    }
    let messages = tape.gather_rows(h, &batch.src)?;
    let summed = tape.segment_sum(messages, &batch.dst, batch.node_count())?;
    tape.add(h, summed)
}

/// One GIN layer applied to `h_prev`.
pub fn gin_layer(
    tape: &mut Tape,
    params: &Bindings,
    layer: &GinLayer,
    h_prev: Var,
    batch: &GraphBatch,
) -> Result<Var, TensorError> {
    let pre = aggregate(tape, h_prev, batch)?;
    let h = layer.lin1.forward(tape, params, pre)?;
    let h = tape.relu(h);
    let h = layer.lin2.forward(tape, params, h)?;
    Ok(tape.relu(h))
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|k| {
                let d_in = if k == 0 { input_dim } else { hidden_dim };
                GinLayer {
                    lin1: Linear::new(store, &format!("encoder.{k}.lin1"), d_in, hidden_dim, rng),
                    lin2: Linear::new(
                        store,
                        &format!("encoder.{k}.lin2"),
                        hidden_dim,
                        hidden_dim,
                        rng,
                    ),
                }
            })
            .collect();
        Self {
            input_dim,
            hidden_dim,
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[GinLayer] {
        &self.layers
    }

    /// `K · d_h`
    pub fn output_dim(&self) -> usize {
        self.hidden_dim * self.layers.len()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        batch: &GraphBatch,
    ) -> Result<BatchEncoding, EncoderError> {
        if batch.feature_dim() != self.input_dim {
            return Err(EncoderError::FeatureDim {
                expected: self.input_dim,
                found: batch.feature_dim(),
            });
        }
        let mut h = tape.constant(batch.features.clone());
        let mut outputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            h = gin_layer(tape, params, layer, h, batch)?;
            outputs.push(h);
        }
        let node_repr = tape.concat_cols(&outputs)?;
        let graph_repr = tape.segment_sum(node_repr, &batch.segment_ids, batch.graph_count)?;
        Ok(BatchEncoding {
            node_repr,
            graph_repr,
            segment_ids: batch.segment_ids.clone(),
            graph_count: batch.graph_count,
        })
    }
}
