use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{self, Write};

use rayon::prelude::*;

use super::spectral::jacobi_eigen;
use crate::graph::Graph;
use crate::tensor::Tensor;

pub const WL_ITERATIONS: usize = 3;

/// Dense symmetric kernel matrix over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    values: Vec<f64>,
    normalized: bool,
}

impl GramMatrix {
    pub fn new(n: usize, values: Vec<f64>, normalized: bool) -> Self {
        assert_eq!(values.len(), n * n, "gram matrix must be n × n");
        Self {
            n,
            values,
            normalized,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.n, self.n, self.values.clone()).expect("n × n")
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        jacobi_eigen(&self.to_tensor())
            .values
            .last()
            .copied()
            .unwrap_or(0.0)
    }

    /// Cosine normalization `k(x,y) / √(k(x,x)·k(y,y))`. A graph with an
    /// empty feature vector gets similarity 0 to everything else and 1 to
    /// itself.
    pub fn cosine_normalized(&self) -> Self {
        let n = self.n;
        let diag: Vec<f64> = (0..n).map(|i| self.get(i, i)).collect();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = if i == j {
                    1.0
                } else if diag[i] > 0.0 && diag[j] > 0.0 {
                    self.get(i, j) / (diag[i] * diag[j]).sqrt()
                } else {
                    0.0
                };
            }
        }
        Self {
            n,
            values,
            normalized: true,
        }
    }

    /// CSV with a `graph,0,1,..` header and one row per graph.
    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        write!(out, "graph")?;
        for j in 0..self.n {
            write!(out, ",{j}")?;
        }
        writeln!(out)?;
        for i in 0..self.n {
            write!(out, "{i}")?;
            for v in self.row(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn dot<K: Ord>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .filter_map(|(k, v)| large.get(k).map(|w| v * w))
        .sum()
}

fn gram_from_features<K: Ord + Sync>(features: &[BTreeMap<K, f64>]) -> GramMatrix {
    let n = features.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| dot(&features[i], &features[j])).collect())
        .collect();
    let mut values = rows.concat();
    // Mirror the upper triangle so symmetry is exact.
    for i in 0..n {
        for j in 0..i {
            values[i * n + j] = values[j * n + i];
        }
    }
    GramMatrix::new(n, values, false).cosine_normalized()
}

fn initial_labels(g: &Graph) -> Vec<i64> {
    g.node_labels()
        .map(<[i64]>::to_vec)
        .unwrap_or_else(|| vec![0; g.node_count()])
}

/// Weisfeiler-Lehman subtree features: label counts for iterations `0..=h`,
/// keyed by `(iteration, label id)`.
pub fn wl_features(graphs: &[Graph], iterations: usize) -> Vec<BTreeMap<(usize, usize), f64>> {
    let adjacency: Vec<Vec<Vec<usize>>> = graphs.iter().map(Graph::adjacency).collect();
    let mut base: HashMap<i64, usize> = HashMap::new();
    let mut labels: Vec<Vec<usize>> = graphs
        .iter()
        .map(|g| {
            initial_labels(g)
                .into_iter()
                .map(|l| {
                    let next = base.len();
                    *base.entry(l).or_insert(next)
                })
                .collect()
        })
        .collect();
    let mut features: Vec<BTreeMap<(usize, usize), f64>> = vec![BTreeMap::new(); graphs.len()];
    let count =
        |features: &mut [BTreeMap<(usize, usize), f64>], labels: &[Vec<usize>], it: usize| {
            for (f, ls) in features.iter_mut().zip(labels) {
                for &l in ls {
                    *f.entry((it, l)).or_insert(0.0) += 1.0;
                }
            }
        };
    count(&mut features, &labels, 0);
    for it in 1..=iterations {
        let mut interned: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
        let relabeled: Vec<Vec<usize>> = labels
            .iter()
            .zip(&adjacency)
            .map(|(ls, adj)| {
                (0..ls.len())
                    .map(|v| {
                        let mut neigh: Vec<usize> = adj[v].iter().map(|&u| ls[u]).collect();
                        neigh.sort_unstable();
                        let next = interned.len();
                        *interned.entry((ls[v], neigh)).or_insert(next)
                    })
                    .collect()
            })
            .collect();
        labels = relabeled;
        count(&mut features, &labels, it);
    }
    features
}

/// Cosine-normalized WL subtree kernel with `iterations` relabeling rounds.
pub fn wl_kernel(graphs: &[Graph], iterations: usize) -> GramMatrix {
    gram_from_features(&wl_features(graphs, iterations))
}

/// Shortest-path features: counts of `(min label, max label, distance)` over
/// unordered connected node pairs.
pub fn sp_features(graphs: &[Graph]) -> Vec<BTreeMap<(i64, i64, usize), f64>> {
    graphs
        .par_iter()
        .map(|g| {
            let adj = g.adjacency();
            let labels = initial_labels(g);
            let n = g.node_count();
            let mut hist = BTreeMap::new();
            let mut dist = vec![usize::MAX; n];
            let mut queue = VecDeque::new();
            for s in 0..n {
                dist.iter_mut().for_each(|d| *d = usize::MAX);
                dist[s] = 0;
                queue.push_back(s);
                while let Some(u) = queue.pop_front() {
                    for &w in &adj[u] {
                        if dist[w] == usize::MAX {
                            dist[w] = dist[u] + 1;
                            queue.push_back(w);
                        }
                    }
                }
                for t in s + 1..n {
                    if dist[t] != usize::MAX {
                        let (a, b) = (labels[s].min(labels[t]), labels[s].max(labels[t]));
                        *hist.entry((a, b, dist[t])).or_insert(0.0) += 1.0;
                    }
                }
            }
            hist
        })
        .collect()
}

/// Cosine-normalized shortest-path kernel.
pub fn sp_kernel(graphs: &[Graph]) -> GramMatrix {
    gram_from_features(&sp_features(graphs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3(labels: Option<Vec<i64>>) -> Graph {
        Graph::new(3, [(0, 1), (1, 2)], labels).unwrap()
    }

    fn triangle() -> Graph {
        Graph::new(3, [(0, 1), (1, 2), (0, 2)], None).unwrap()
    }

    #[test]
    fn isomorphic_pair_has_unit_similarity() {
        let a = Graph::new(4, [(0, 1), (1, 2), (2, 3)], Some(vec![1, 2, 2, 3])).unwrap();
        let b = Graph::new(4, [(3, 2), (2, 0), (0, 1)], Some(vec![2, 3, 2, 1])).unwrap();
        for k in [wl_kernel(&[a.clone(), b.clone()], 3), sp_kernel(&[a, b])] {
            assert!((k.get(0, 1) - 1.0).abs() < 1e-12, "{k:?}");
            assert_eq!(k.get(0, 0), 1.0);
        }
    }

    #[test]
    fn disjoint_alphabets_are_orthogonal() {
        let a = Graph::new(2, [(0, 1)], Some(vec![1, 1])).unwrap();
        let b = Graph::new(2, [(0, 1)], Some(vec![2, 2])).unwrap();
        assert_eq!(wl_kernel(&[a, b], 0).get(0, 1), 0.0);
    }

    #[test]
    fn triangle_vs_path_after_one_round() {
        // Round 0: both graphs have three nodes of label a → 3·3 = 9.
        // Round 1: triangle nodes all become (a,{a,a}); the path has
        // two (a,{a}) and one (a,{a,a}) → 3·1 = 3. Raw k = 12.
        // Self: triangle 9 + 9 = 18, path 9 + 4 + 1 = 14.
        let k = wl_kernel(&[triangle(), path3(None)], 1);
        let expected = 12.0 / (18.0f64 * 14.0).sqrt();
        assert!((k.get(0, 1) - expected).abs() < 1e-15);
    }

    #[test]
    fn isolated_nodes_have_no_paths() {
        let a = Graph::new(1, [], None).unwrap();
        let b = Graph::new(2, [], None).unwrap();
        let k = sp_kernel(&[a, b]);
        assert_eq!(k.get(0, 1), 0.0);
    }

    #[test]
    fn path_with_relabeled_endpoint() {
        // x-y-z labels 0-0-0: (0,0,1)×2, (0,0,2)×1.
        // Relabel one endpoint to 1: (0,1,1)×1, (0,0,1)×1, (0,1,2)×1.
        // Dot: (0,0,1) 2·1 = 2. Norms: 5 and 3.
        let k = sp_kernel(&[path3(Some(vec![0, 0, 0])), path3(Some(vec![1, 0, 0]))]);
        assert!((k.get(0, 1) - 2.0 / 15.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let g = GramMatrix::new(2, vec![1.0, 0.5, 0.5, 1.0], true);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "graph,0,1\n0,1,0.5\n1,0.5,1\n"
        );
    }
}
