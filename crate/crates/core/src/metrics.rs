//! Clustering accuracy, NMI and ARI.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label vectors are empty")]
    Empty,
}

/// Counts `n_ij` of items with true class `i` and predicted cluster `j`.
/// Classes and clusters are the distinct labels of each argument, in
/// increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let ids = labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("label present"))
        .collect();
    (ids, distinct.len())
}

impl ContingencyTable {
    pub fn new(y_true: &[usize], y_pred: &[usize]) -> Result<Self, MetricError> {
        if y_true.len() != y_pred.len() {
            return Err(MetricError::LengthMismatch(y_true.len(), y_pred.len()));
        }
        if y_true.is_empty() {
            return Err(MetricError::Empty);
        }
        let (t, r) = compact(y_true);
        let (p, s) = compact(y_pred);
        let mut counts = vec![vec![0u64; s]; r];
        for (&i, &j) in t.iter().zip(&p) {
            counts[i][j] += 1;
        }
        let row_sums = counts.iter().map(|row| row.iter().sum()).collect();
        let col_sums = (0..s)
            .map(|j| counts.iter().map(|row| row[j]).sum())
            .collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total: y_true.len() as u64,
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Minimum-cost perfect assignment on a square cost matrix. Returns the
/// column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(
        cost.iter().all(|r| r.len() == n),
        "cost matrix must be square"
    );
    // Potentials formulation with 1-based sentinel row/column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < min_v[j] {
                        min_v[j] = cur;
                        way[j] = j0;
                    }
                    if min_v[j] < delta {
                        delta = min_v[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Fraction of items matched under the best one-to-one cluster→class map.
pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64, MetricError> {
    let table = ContingencyTable::new(y_true, y_pred)?;
    let r = table.counts.len();
    let s = table.col_sums.len();
    let k = r.max(s);
    let mut cost = vec![vec![0.0; k]; k];
    for (row, counts) in cost.iter_mut().zip(&table.counts) {
        for (c, &n) in row.iter_mut().zip(counts) {
            *c = -(n as f64);
        }
    }
    let matched: u64 = hungarian(&cost)
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < r && j < s)
        .map(|(i, &j)| table.counts[i][j])
        .sum();
    Ok(matched as f64 / table.total as f64)
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of both entropies.
pub fn nmi(y_true: &[usize], y_pred: &[usize]) -> Result<f64, MetricError> {
    let t = ContingencyTable::new(y_true, y_pred)?;
    let n = t.total as f64;
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
            }
        }
    }
    let denom = (entropy(&t.row_sums, n) + entropy(&t.col_sums, n)) / 2.0;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn pairs(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index. Two single-cluster partitions score 1.
pub fn ari(y_true: &[usize], y_pred: &[usize]) -> Result<f64, MetricError> {
    let t = ContingencyTable::new(y_true, y_pred)?;
    let index: f64 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let b: f64 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    // Scaled by the total pair count so integer-valued cases stay exact.
    let total = pairs(t.total);
    let num = index * total - a * b;
    let den = (a + b) / 2.0 * total - a * b;
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(num / den)
}
