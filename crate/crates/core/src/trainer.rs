//! Mini-batch training of the joint MI + clustering objective, ablation
//! modes, checkpoints and sweeps.

use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{kmeans, KMeansError, KMEANS_RESTARTS};
use crate::cluster::{
    hard_labels, init_centers, kl_loss, kl_value, soft_assign_values, target_distribution,
    ClusterError, ClusterHead,
};
use crate::encoder::{Encoder, EncoderError, GraphBatch};
use crate::graph::{build_features, DatasetFeatures, GraphDataset};
use crate::metrics::{accuracy, ari, nmi, MetricError};
use crate::mi::{js_mi_loss, Discriminator, MiError};
use crate::tensor::checkpoint::{self, CheckpointError};
use crate::tensor::{Adam, AdamConfig, LoadError, ParamStore, Tape, Tensor, TensorError, Var};

/// Graphs per forward pass when embedding a whole dataset.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Joint MI + clustering, labels from Q.
    Full,
    /// MI only, labels from k-means on graph representations.
    D1,
    /// Joint training, labels from k-means on cluster embeddings.
    D2,
    /// MI for the first half of the epochs, then clustering only.
    D3,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::D1 => "d1",
            Mode::D2 => "d2",
            Mode::D3 => "d3",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Mode::Full),
            "d1" => Ok(Mode::D1),
            "d2" => Ok(Mode::D2),
            "d3" => Ok(Mode::D3),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// GIN layers `K`.
    pub layers: usize,
    /// Hidden width `d_h`.
    pub hidden_dim: usize,
    /// Cluster embedding width `d_z`.
    pub z_dim: usize,
    /// Cluster count; the dataset's class count when absent.
    pub clusters: Option<usize>,
    pub seed: u64,
    /// MI-only epochs before center initialization in `full` and `d2`.
    pub pretrain_epochs: usize,
    /// Weight of the clustering loss against the MI loss.
    pub cluster_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            epochs: 20,
            batch_size: 128,
            learning_rate: 1e-3,
            layers: 4,
            hidden_dim: 64,
            z_dim: 16,
            clusters: None,
            seed: 0,
            pretrain_epochs: 5,
            cluster_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(1e-5..=1e-3).contains(&self.learning_rate) {
            return bad(format!(
                "learning rate {} outside [1e-5, 1e-3]",
                self.learning_rate
            ));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} below 2", self.batch_size));
        }
        if self.layers == 0 || self.hidden_dim == 0 || self.z_dim == 0 {
            return bad("layers, hidden_dim and z_dim must be positive".into());
        }
        if self.clusters == Some(0) {
            return bad("cluster count must be positive".into());
        }
        if !self.cluster_weight.is_finite() || self.cluster_weight < 0.0 {
            return bad(format!("cluster weight {} invalid", self.cluster_weight));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset has fewer than 2 graphs")]
    TooFewGraphs,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (mi {mi}, cluster {cluster})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        mi: f64,
        cluster: f64,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Mi(#[from] MiError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Load(#[from] LoadError),
}

/// Encoder, discriminator and cluster head over one parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub discriminator: Discriminator,
    pub head: ClusterHead,
}

impl Model {
    pub fn new(
        input_dim: usize,
        config: &TrainConfig,
        clusters: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, input_dim, config.hidden_dim, config.layers, rng);
        let out = encoder.output_dim();
        let discriminator = Discriminator::new(&mut store, out, out, rng);
        let head = ClusterHead::new(
            &mut store,
            (out, config.hidden_dim, config.z_dim),
            clusters,
            rng,
        );
        Self {
            store,
            encoder,
            discriminator,
            head,
        }
    }

    /// Graph representations `H` and cluster embeddings `Z` for every graph,
    /// computed with frozen parameters.
    pub fn embed(
        &self,
        dataset: &GraphDataset,
        features: &DatasetFeatures,
    ) -> Result<(Tensor, Tensor), TrainError> {
        let mut h_rows = Vec::new();
        let mut z_rows = Vec::new();
        let all: Vec<usize> = (0..dataset.len()).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let batch = GraphBatch::from_dataset(dataset, features, chunk)?;
            let mut tape = Tape::new();
            let p = self.store.bind_frozen(&mut tape);
            let enc = self.encoder.forward(&mut tape, &p, &batch)?;
            let z = self.head.project(&mut tape, &p, enc.graph_repr)?;
            h_rows.extend_from_slice(tape.value(enc.graph_repr).data());
            z_rows.extend_from_slice(tape.value(z).data());
        }
        let n = dataset.len();
        Ok((
            Tensor::matrix(n, self.encoder.output_dim(), h_rows)?,
            Tensor::matrix(n, self.head.z_dim(), z_rows)?,
        ))
    }

    pub fn centers(&self) -> &Tensor {
        self.store.get(self.head.centers)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        checkpoint::save(path, &self.store.named_tensors())?;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let tensors = checkpoint::load(path)?;
        self.store.load_named(tensors)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub mode: Mode,
    pub config: TrainConfig,
    pub seed: u64,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub seconds: f64,
    /// Mean total batch loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Mean MI loss per epoch (0 for clustering-only epochs).
    pub mi_curve: Vec<f64>,
    /// Mean clustering loss per epoch (0 before centers exist).
    pub cluster_curve: Vec<f64>,
    /// Full-dataset clustering loss right after center initialization.
    pub initial_cluster_loss: Option<f64>,
    /// Full-dataset clustering loss after training.
    pub final_cluster_loss: Option<f64>,
    pub labels: Vec<usize>,
}

/// A finished run together with the trained model and its embeddings.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub result: RunResult,
    pub model: Model,
    /// `H`, one row per graph.
    pub graph_repr: Tensor,
    /// `Z`, one row per graph.
    pub embeddings: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    MiOnly,
    Joint,
    ClusterOnly,
}

fn phase(config: &TrainConfig, epoch: usize) -> Phase {
    match config.mode {
        Mode::D1 => Phase::MiOnly,
        Mode::Full | Mode::D2 if epoch < config.pretrain_epochs => Phase::MiOnly,
        Mode::Full | Mode::D2 => Phase::Joint,
        Mode::D3 if epoch < config.epochs / 2 => Phase::MiOnly,
        Mode::D3 => Phase::ClusterOnly,
    }
}

fn full_cluster_loss(model: &Model, z: &Tensor) -> Result<Option<f64>, TrainError> {
    let q = soft_assign_values(z, model.centers())?;
    match target_distribution(&q) {
        Ok(p) => Ok(Some(kl_value(&p, &q))),
        Err(ClusterError::EmptyCluster(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn train(dataset: &GraphDataset, config: &TrainConfig) -> Result<RunResult, TrainError> {
    train_model(dataset, config).map(|o| o.result)
}

/// Runs one training job and keeps the model.
pub fn train_model(
    dataset: &GraphDataset,
    config: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(TrainError::TooFewGraphs);
    }
    let start = Instant::now();
    let features = build_features(dataset);
    let clusters = config.clusters.unwrap_or(dataset.num_classes);

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let kmeans_seed: u64 = master.gen();

    let mut model = Model::new(features.dim, config, clusters, &mut init_rng);
    let mut adam = Adam::new(AdamConfig::new(config.learning_rate));
    let mut centers_ready = false;
    let mut initial_cluster_loss = None;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut mi_curve = Vec::with_capacity(config.epochs);
    let mut cluster_curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let ph = phase(config, epoch);
        if ph != Phase::MiOnly && !centers_ready {
            let (_, z) = model.embed(dataset, &features)?;
            let centers = init_centers(&z, clusters, kmeans_seed)?;
            model.store.set(model.head.centers, centers)?;
            initial_cluster_loss = full_cluster_loss(&model, &z)?;
            centers_ready = true;
        }
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut mi_sum, mut cl_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let batch = GraphBatch::from_dataset(dataset, &features, idx)?;
            let mut tape = Tape::new();
            let p = model.store.bind(&mut tape);
            let enc = model.encoder.forward(&mut tape, &p, &batch)?;

            let mi: Option<Var> = match ph {
                Phase::ClusterOnly => None,
                _ => Some(js_mi_loss(&mut tape, &p, &model.discriminator, &enc)?),
            };
            let cl: Option<Var> = if ph == Phase::MiOnly {
                None
            } else {
                let z = model.head.project(&mut tape, &p, enc.graph_repr)?;
                let q = model.head.assign(&mut tape, &p, z)?;
                match target_distribution(tape.value(q)) {
                    Ok(target) => Some(kl_loss(&mut tape, &target, q)?),
                    // Degenerate batch: no clustering signal this step.
                    Err(ClusterError::EmptyCluster(_)) => None,
                    Err(e) => return Err(e.into()),
                }
            };
            let loss = match (mi, cl) {
                (Some(m), Some(c)) => {
                    let wc = tape.scale(c, config.cluster_weight);
                    tape.add(m, wc)?
                }
                (Some(m), None) => m,
                (None, Some(c)) => tape.scale(c, config.cluster_weight),
                (None, None) => continue,
            };
            let mi_v = mi.map_or(0.0, |v| tape.value(v).item());
            let cl_v = cl.map_or(0.0, |v| tape.value(v).item());
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    mi: mi_v,
                    cluster: cl_v,
                });
            }
            tape.backward(loss)?;
            model.store.collect_grads(&tape, &p);
            adam.step(&mut model.store)?;
            total += lv;
            mi_sum += mi_v;
            cl_sum += cl_v;
            batches += 1;
        }
        let denom = batches.max(1) as f64;
        loss_curve.push(total / denom);
        mi_curve.push(mi_sum / denom);
        cluster_curve.push(cl_sum / denom);
    }

    let (h, z) = model.embed(dataset, &features)?;
    let uses_q = matches!(config.mode, Mode::Full | Mode::D3);
    if uses_q && !centers_ready {
        // Too few epochs to reach the clustering phase.
        let centers = init_centers(&z, clusters, kmeans_seed)?;
        model.store.set(model.head.centers, centers)?;
        initial_cluster_loss = full_cluster_loss(&model, &z)?;
        centers_ready = true;
    }
    let labels = match config.mode {
        Mode::Full | Mode::D3 => hard_labels(&soft_assign_values(&z, model.centers())?),
        Mode::D1 => kmeans(&h, clusters, kmeans_seed, KMEANS_RESTARTS)?.labels,
        Mode::D2 => kmeans(&z, clusters, kmeans_seed, KMEANS_RESTARTS)?.labels,
    };
    let final_cluster_loss = if centers_ready {
        full_cluster_loss(&model, &z)?
    } else {
        None
    };

    let truth = &dataset.graph_labels;
    let result = RunResult {
        dataset: dataset.name.clone(),
        mode: config.mode,
        config: config.clone(),
        seed: config.seed,
        acc: accuracy(truth, &labels)?,
        nmi: nmi(truth, &labels)?,
        ari: ari(truth, &labels)?,
        seconds: start.elapsed().as_secs_f64(),
        loss_curve,
        mi_curve,
        cluster_curve,
        initial_cluster_loss,
        final_cluster_loss,
        labels,
    };
    Ok(TrainOutput {
        result,
        model,
        graph_repr: h,
        embeddings: z,
    })
}

/// Runs `config` once per seed, in parallel, results in seed order.
pub fn train_seeds(
    dataset: &GraphDataset,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<RunResult>, TrainError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut c = config.clone();
            c.seed = seed;
            train(dataset, &c)
        })
        .collect()
}

/// Writes `Z` as CSV: a `# dataset=..,seed=..` line, a `graph,z0,..` header,
/// then one row per graph.
pub fn write_embeddings_csv(
    mut out: impl Write,
    dataset: &str,
    seed: u64,
    z: &Tensor,
) -> io::Result<()> {
    writeln!(out, "# dataset={dataset},seed={seed}")?;
    write!(out, "graph")?;
    for k in 0..z.cols() {
        write!(out, ",z{k}")?;
    }
    writeln!(out)?;
    for i in 0..z.rows() {
        write!(out, "{i}")?;
        for v in z.row(i) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Hyperparameter grid. Absent axes keep the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default, alias = "hidden_dim")]
    pub d_h: Option<Vec<usize>>,
    #[serde(default, alias = "z_dim")]
    pub d_z: Option<Vec<usize>>,
    #[serde(default, alias = "layers", rename = "k", alias = "K")]
    pub k: Option<Vec<usize>>,
}

impl SweepGrid {
    /// Cartesian product in `d_h`, `d_z`, `k` order. Empty when no axis is
    /// given or any given axis is empty.
    pub fn points(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        if self.d_h.is_none() && self.d_z.is_none() && self.k.is_none() {
            return Vec::new();
        }
        let axis =
            |a: &Option<Vec<usize>>, default: usize| a.clone().unwrap_or_else(|| vec![default]);
        let mut out = Vec::new();
        for &d_h in &axis(&self.d_h, base.hidden_dim) {
            for &d_z in &axis(&self.d_z, base.z_dim) {
                for &k in &axis(&self.k, base.layers) {
                    out.push(TrainConfig {
                        hidden_dim: d_h,
                        z_dim: d_z,
                        layers: k,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub key: String,
    pub d_h: usize,
    pub d_z: usize,
    pub k: usize,
    pub mean_acc: f64,
    pub mean_nmi: f64,
    pub mean_ari: f64,
    pub runs: Vec<RunResult>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// One row per grid point, each averaged over `seeds`. Grid points and seeds
/// run in parallel; row order follows [`SweepGrid::points`].
pub fn sweep(
    dataset: &GraphDataset,
    base: &TrainConfig,
    grid: &SweepGrid,
    seeds: &[u64],
) -> Result<Vec<SweepRow>, TrainError> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(TrainError::Config("sweep grid is empty".into()));
    }
    if seeds.is_empty() {
        return Err(TrainError::Config("sweep needs at least one seed".into()));
    }
    for p in &points {
        p.validate()?;
    }
    let jobs: Vec<TrainConfig> = points
        .iter()
        .flat_map(|p| {
            seeds.iter().map(move |&s| TrainConfig {
                seed: s,
                ..p.clone()
            })
        })
        .collect();
    let mut results = jobs
        .par_iter()
        .map(|c| train(dataset, c))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter();
    Ok(points
        .into_iter()
        .map(|p| {
            let runs: Vec<RunResult> = results.by_ref().take(seeds.len()).collect();
            SweepRow {
                key: format!("d_h={},d_z={},k={}", p.hidden_dim, p.z_dim, p.layers),
                d_h: p.hidden_dim,
                d_z: p.z_dim,
                k: p.layers,
                mean_acc: mean(runs.iter().map(|r| r.acc)),
                mean_nmi: mean(runs.iter().map(|r| r.nmi)),
                mean_ari: mean(runs.iter().map(|r| r.ari)),
                runs,
            }
        })
        .collect())
}
