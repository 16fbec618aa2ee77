//! Graph data model, TUDataset flat-file ingestion and node features.
//!
//! A TUDataset directory holds one block-diagonal adjacency for the whole
//! collection. Nodes are numbered 1..=n globally; `{name}_graph_indicator.txt`
//! maps every node to its (1-based) graph. This module splits that into
//! per-graph [`Graph`] values with 0-based local node indices.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("required file missing: {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("edge ({u}, {v}) references a node outside 1..={node_count}")]
    EdgeOutOfRange {
        u: usize,
        v: usize,
        node_count: usize,
    },
    #[error("edge ({u}, {v}) joins nodes of different graphs")]
    EdgeAcrossGraphs { u: usize, v: usize },
    #[error("graph indicator is not contiguous and non-decreasing at node {node}")]
    BadIndicator { node: usize },
    #[error("{what}: expected {expected} entries, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("edge ({u}, {v}) out of range for a graph with {node_count} nodes")]
    InvalidEdge {
        u: usize,
        v: usize,
        node_count: usize,
    },
    #[error("permutation of length {found} does not match node count {expected}")]
    PermutationLength { expected: usize, found: usize },
    #[error("permutation is not a bijection")]
    NotAPermutation,
    #[error("dataset is empty")]
    Empty,
}

/// An undirected graph with 0-based nodes.
///
/// Edges are stored once each as `(min, max)`, sorted and deduplicated.
/// Self-loops are dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    node_labels: Option<Vec<i64>>,
}

impl Graph {
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        node_labels: Option<Vec<i64>>,
    ) -> Result<Self, GraphError> {
        let mut canonical = BTreeSet::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(GraphError::InvalidEdge { u, v, node_count });
            }
            if u != v {
                canonical.insert((u.min(v), u.max(v)));
            }
        }
        if let Some(labels) = &node_labels {
            if labels.len() != node_count {
                return Err(GraphError::LengthMismatch {
                    what: "node labels",
                    expected: node_count,
                    found: labels.len(),
                });
            }
        }
        Ok(Self {
            node_count,
            edges: canonical.into_iter().collect(),
            node_labels,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_labels(&self) -> Option<&[i64]> {
        self.node_labels.as_deref()
    }

    /// Neighbor lists, each sorted ascending.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }
}

/// An ordered collection of graphs with ground-truth classes.
///
/// `graph_labels` are remapped to `0..num_classes` in ascending order of the
/// original values and are only consumed by evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub graph_labels: Vec<usize>,
    pub num_classes: usize,
}

impl GraphDataset {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<Graph>,
        raw_labels: &[i64],
    ) -> Result<Self, GraphError> {
        if raw_labels.len() != graphs.len() {
            return Err(GraphError::LengthMismatch {
                what: "graph labels",
                expected: graphs.len(),
                found: raw_labels.len(),
            });
        }
        let distinct: BTreeSet<i64> = raw_labels.iter().copied().collect();
        let index: BTreeMap<i64, usize> =
            distinct.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        Ok(Self {
            name: name.into(),
            graph_labels: raw_labels.iter().map(|l| index[l]).collect(),
            num_classes: distinct.len(),
            graphs,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn mean_node_count(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        let total: usize = self.graphs.iter().map(Graph::node_count).sum();
        total as f64 / self.graphs.len() as f64
    }

    pub fn mean_edge_count(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        let total: usize = self.graphs.iter().map(Graph::edge_count).sum();
        total as f64 / self.graphs.len() as f64
    }

    pub fn has_node_labels(&self) -> bool {
        !self.graphs.is_empty() && self.graphs.iter().all(|g| g.node_labels.is_some())
    }
}

fn dataset_file(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

fn read_required(path: &Path) -> Result<String, GraphError> {
    if !path.is_file() {
        return Err(GraphError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn parse_int_column(path: &Path, text: &str) -> Result<Vec<i64>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        // Some releases carry extra comma-separated columns; the first one is the label.
        let first = line.split(',').next().unwrap_or("").trim();
        let value = first.parse::<i64>().map_err(|e| GraphError::Parse {
            file: file_label(path),
            line: i + 1,
            message: format!("{first:?}: {e}"),
        })?;
        out.push(value);
    }
    Ok(out)
}

fn parse_edge_rows(path: &Path, text: &str) -> Result<Vec<(usize, usize)>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let mut next = || -> Result<usize, GraphError> {
            let tok = parts.next().ok_or_else(|| GraphError::Parse {
                file: file_label(path),
                line: i + 1,
                message: "expected two comma-separated node ids".into(),
            })?;
            tok.parse::<usize>().map_err(|e| GraphError::Parse {
                file: file_label(path),
                line: i + 1,
                message: format!("{tok:?}: {e}"),
            })
        };
        let u = next()?;
        let v = next()?;
        out.push((u, v));
    }
    Ok(out)
}

/// Reads `{name}_A.txt`, `{name}_graph_indicator.txt`, `{name}_graph_labels.txt`
/// and, when present, `{name}_node_labels.txt` from `dir`.
pub fn parse_tudataset(dir: impl AsRef<Path>, name: &str) -> Result<GraphDataset, GraphError> {
    let dir = dir.as_ref();
    let a_path = dataset_file(dir, name, "A");
    let ind_path = dataset_file(dir, name, "graph_indicator");
    let gl_path = dataset_file(dir, name, "graph_labels");
    let nl_path = dataset_file(dir, name, "node_labels");

    // Check presence of every required file before reading any of them.
    for p in [&a_path, &ind_path, &gl_path] {
        if !p.is_file() {
            return Err(GraphError::MissingFile(p.clone()));
        }
    }

    let indicator = parse_int_column(&ind_path, &read_required(&ind_path)?)?;
    let graph_labels = parse_int_column(&gl_path, &read_required(&gl_path)?)?;
    let edge_rows = parse_edge_rows(&a_path, &read_required(&a_path)?)?;
    let node_labels = if nl_path.is_file() {
        let labels = parse_int_column(&nl_path, &read_required(&nl_path)?)?;
        if labels.len() != indicator.len() {
            return Err(GraphError::LengthMismatch {
                what: "node labels",
                expected: indicator.len(),
                found: labels.len(),
            });
        }
        Some(labels)
    } else {
        None
    };

    if indicator.is_empty() {
        return Err(GraphError::Empty);
    }

    // Graph ids must start at 1 and step by at most 1, never decreasing.
    let mut graph_of = Vec::with_capacity(indicator.len());
    let mut local_index = Vec::with_capacity(indicator.len());
    let mut sizes: Vec<usize> = Vec::new();
    let mut prev = 0i64;
    for (node, &g) in indicator.iter().enumerate() {
        if g < prev || g > prev + 1 || g < 1 {
            return Err(GraphError::BadIndicator { node: node + 1 });
        }
        if g == prev + 1 {
            sizes.push(0);
            prev = g;
        }
        let gi = (g - 1) as usize;
        graph_of.push(gi);
        local_index.push(sizes[gi]);
        sizes[gi] += 1;
    }
    let graph_count = sizes.len();
    if graph_labels.len() != graph_count {
        return Err(GraphError::LengthMismatch {
            what: "graph labels",
            expected: graph_count,
            found: graph_labels.len(),
        });
    }

    let node_total = indicator.len();
    let mut per_graph_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    for (u, v) in edge_rows {
        if u == 0 || v == 0 || u > node_total || v > node_total {
            return Err(GraphError::EdgeOutOfRange {
                u,
                v,
                node_count: node_total,
            });
        }
        let (gu, gv) = (graph_of[u - 1], graph_of[v - 1]);
        if gu != gv {
            return Err(GraphError::EdgeAcrossGraphs { u, v });
        }
        per_graph_edges[gu].push((local_index[u - 1], local_index[v - 1]));
    }

    let mut graphs = Vec::with_capacity(graph_count);
    let mut offset = 0;
    for (gi, edges) in per_graph_edges.into_iter().enumerate() {
        let n = sizes[gi];
        let labels = node_labels
            .as_ref()
            .map(|all| all[offset..offset + n].to_vec());
        graphs.push(Graph::new(n, edges, labels)?);
        offset += n;
    }

    GraphDataset::new(name, graphs, &graph_labels)
}

/// Writes `dataset` in TUDataset layout. Every undirected edge is emitted in
/// both directions, as the published files do.
pub fn write_tudataset(dataset: &GraphDataset, dir: impl AsRef<Path>) -> Result<(), GraphError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GraphError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let name = &dataset.name;

    let mut a = String::new();
    let mut ind = String::new();
    let mut nl = String::new();
    let mut offset = 0usize;
    for (gi, g) in dataset.graphs.iter().enumerate() {
        for _ in 0..g.node_count() {
            ind.push_str(&format!("{}\n", gi + 1));
        }
        for &(u, v) in g.edges() {
            a.push_str(&format!("{}, {}\n", u + offset + 1, v + offset + 1));
            a.push_str(&format!("{}, {}\n", v + offset + 1, u + offset + 1));
        }
        if let Some(labels) = g.node_labels() {
            for l in labels {
                nl.push_str(&format!("{l}\n"));
            }
        }
        offset += g.node_count();
    }
    let gl: String = dataset
        .graph_labels
        .iter()
        .map(|l| format!("{l}\n"))
        .collect();

    let mut files = vec![("A", a), ("graph_indicator", ind), ("graph_labels", gl)];
    if dataset.has_node_labels() {
        files.push(("node_labels", nl));
    }
    for (suffix, body) in files {
        let path = dataset_file(dir, name, suffix);
        let mut f = fs::File::create(&path).map_err(io(&path))?;
        f.write_all(body.as_bytes()).map_err(io(&path))?;
    }
    Ok(())
}

/// Dense row-major node-feature matrix of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self, GraphError> {
        if values.len() != rows * dim {
            return Err(GraphError::LengthMismatch {
                what: "feature values",
                expected: rows * dim,
                found: values.len(),
            });
        }
        Ok(Self { rows, dim, values })
    }

    pub fn one_hot(indices: &[usize], dim: usize) -> Self {
        let mut values = vec![0.0; indices.len() * dim];
        for (r, &i) in indices.iter().enumerate() {
            values[r * dim + i] = 1.0;
        }
        Self {
            rows: indices.len(),
            dim,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }
}

/// How initial node features were derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    NodeLabels,
    Degree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFeatures {
    pub dim: usize,
    pub source: FeatureSource,
    pub per_graph: Vec<FeatureMatrix>,
}

/// One-hot node features: over the dataset-wide label set when every graph
/// has node labels, otherwise over node degree `0..=max_degree`.
pub fn build_features(dataset: &GraphDataset) -> DatasetFeatures {
    if dataset.has_node_labels() {
        let distinct: BTreeSet<i64> = dataset
            .graphs
            .iter()
            .flat_map(|g| g.node_labels().unwrap_or(&[]).iter().copied())
            .collect();
        if !distinct.is_empty() {
            let index: BTreeMap<i64, usize> =
                distinct.iter().enumerate().map(|(i, &l)| (l, i)).collect();
            let dim = distinct.len();
            let per_graph = dataset
                .graphs
                .iter()
                .map(|g| {
                    let idx: Vec<usize> = g
                        .node_labels()
                        .unwrap_or(&[])
                        .iter()
                        .map(|l| index[l])
                        .collect();
                    FeatureMatrix::one_hot(&idx, dim)
                })
                .collect();
            return DatasetFeatures {
                dim,
                source: FeatureSource::NodeLabels,
                per_graph,
            };
        }
    }
    let degrees: Vec<Vec<usize>> = dataset.graphs.iter().map(Graph::degrees).collect();
    let max_degree = degrees.iter().flatten().copied().max().unwrap_or(0);
    let dim = max_degree + 1;
    DatasetFeatures {
        dim,
        source: FeatureSource::Degree,
        per_graph: degrees
            .iter()
            .map(|d| FeatureMatrix::one_hot(d, dim))
            .collect(),
    }
}

/// Relabels node `i` as `perm[i]`, moving feature rows and node labels along.
pub fn permute_graph(
    graph: &Graph,
    features: &FeatureMatrix,
    perm: &[usize],
) -> Result<(Graph, FeatureMatrix), GraphError> {
    let n = graph.node_count();
    if perm.len() != n {
        return Err(GraphError::PermutationLength {
            expected: n,
            found: perm.len(),
        });
    }
    if features.rows() != n {
        return Err(GraphError::LengthMismatch {
            what: "feature rows",
            expected: n,
            found: features.rows(),
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(GraphError::NotAPermutation);
        }
    }
    let edges = graph.edges().iter().map(|&(u, v)| (perm[u], perm[v]));
    let labels = graph.node_labels().map(|old| {
        let mut new = vec![0; n];
        for (i, &l) in old.iter().enumerate() {
            new[perm[i]] = l;
        }
        new
    });
    let d = features.dim();
    let mut values = vec![0.0; n * d];
    for i in 0..n {
        values[perm[i] * d..(perm[i] + 1) * d].copy_from_slice(features.row(i));
    }
    Ok((
        Graph::new(n, edges, labels)?,
        FeatureMatrix {
            rows: n,
            dim: d,
            values,
        },
    ))
}
