//! Dense `f64` tensors and a reverse-mode differentiation tape.
//!
//! Every operation appends a node to a [`Tape`]; [`Tape::backward`] walks the
//! nodes in reverse insertion order and accumulates exact gradients into
//! every node that depends on a leaf created with [`Tape::leaf`]. Reductions
//! always sum left to right so that replaying a tape is bitwise reproducible.

mod adam;
pub mod checkpoint;
mod params;

pub use adam::{Adam, AdamConfig};
pub use params::{Bindings, LoadError, Param, ParamId, ParamStore};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    NotAMatrix { op: &'static str, shape: Vec<usize> },
    #[error("value length {len} does not match shape {shape:?}")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for {limit}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{op}: no operands")]
    Empty { op: &'static str },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("parameter {name}: expected shape {expected:?}, got {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// A dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::BadLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(TensorError::NotAMatrix {
                op,
                shape: self.shape.clone(),
            }),
        }
    }
}

// Dense kernels on row-major slices.

/// `a (m×k) · b (k×n)`
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// `aᵀ · b` where `a` is `m×k` and `b` is `m×n`; result `k×n`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    Recip(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SegmentSum(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    BroadcastAddRow(Var, Var),
    BroadcastMulCol(Var, Var),
    SqDist(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one forward/backward pass. Confined to a
/// single thread; build a fresh tape per step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` output with respect to `v`, if any
    /// gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.value(a).expect_matrix("matmul")?;
        let (k2, n) = self.value(b).expect_matrix("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let data = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::MatMul(a, b),
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::ClampMin(a, floor), |x| x.max(floor))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// `m×n → m×1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).expect_matrix("row_sum")?;
        let src = self.value(a).data();
        let data = (0..m)
            .map(|i| src[i * n..(i + 1) * n].iter().sum())
            .collect();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor {
                shape: vec![m, 1],
                data,
            },
            Op::RowSum(a),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).expect_matrix("transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor {
                shape: vec![n, m],
                data,
            },
            Op::Transpose(a),
            rg,
        ))
    }

    /// Stacks matrices vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or(TensorError::Empty { op: "concat_rows" })?;
        let (_, n) = self.value(*first).expect_matrix("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).expect_matrix("concat_rows")?;
            if c != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: vec![rows, n],
                    right: vec![r, c],
                });
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor {
                shape: vec![rows, n],
                data,
            },
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Places matrices side by side; all must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or(TensorError::Empty { op: "concat_cols" })?;
        let (m, _) = self.value(*first).expect_matrix("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).expect_matrix("concat_cols")?;
            if r != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: vec![m, 0],
                    right: vec![r, c],
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor {
                shape: vec![m, total],
                data,
            },
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Sums the rows of `a` into `groups` buckets: row `i` goes to
    /// `segments[i]`.
    pub fn segment_sum(
        &mut self,
        a: Var,
        segments: &[usize],
        groups: usize,
    ) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).expect_matrix("segment_sum")?;
        if segments.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                left: vec![m, n],
                right: vec![segments.len()],
            });
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; groups * n];
        for (i, &s) in segments.iter().enumerate() {
            if s >= groups {
                return Err(TensorError::IndexOutOfRange {
                    op: "segment_sum",
                    index: s,
                    limit: groups,
                });
            }
            for j in 0..n {
                data[s * n + j] += src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor {
                shape: vec![groups, n],
                data,
            },
            Op::SegmentSum(a, segments.to_vec()),
            rg,
        ))
    }

    /// Row `r` of the output is row `index[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).expect_matrix("gather_rows")?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index {
            if i >= m {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    limit: m,
                });
            }
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor {
                shape: vec![index.len(), n],
                data,
            },
            Op::GatherRows(a, index.to_vec()),
            rg,
        ))
    }

    /// Adds the `1×n` row vector `row` to every row of `a`.
    pub fn broadcast_add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).expect_matrix("broadcast_add_row")?;
        let rs = self.value(row).shape();
        if rs != [1, n] {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_add_row",
                left: vec![m, n],
                right: rs.to_vec(),
            });
        }
        let (src, r) = (self.value(a).data(), self.value(row).data());
        let data = src
            .iter()
            .enumerate()
            .map(|(idx, &x)| x + r[idx % n])
            .collect();
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::BroadcastAddRow(a, row),
            rg,
        ))
    }

    /// Multiplies row `i` of `a` by `col[i]`, where `col` is `m×1`.
    pub fn broadcast_mul_col(&mut self, a: Var, col: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).expect_matrix("broadcast_mul_col")?;
        let cs = self.value(col).shape();
        if cs != [m, 1] {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_mul_col",
                left: vec![m, n],
                right: cs.to_vec(),
            });
        }
        let (src, c) = (self.value(a).data(), self.value(col).data());
        let data = src
            .iter()
            .enumerate()
            .map(|(idx, &x)| x * c[idx / n.max(1)])
            .collect();
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::BroadcastMulCol(a, col),
            rg,
        ))
    }

    /// Pairwise squared Euclidean distances between the rows of `a` (`n×d`)
    /// and the rows of `b` (`c×d`), giving `n×c`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (n, d) = self.value(a).expect_matrix("sq_dist")?;
        let (c, d2) = self.value(b).expect_matrix("sq_dist")?;
        if d != d2 {
            return Err(TensorError::ShapeMismatch {
                op: "sq_dist",
                left: vec![n, d],
                right: vec![c, d2],
            });
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut data = vec![0.0; n * c];
        for i in 0..n {
            for t in 0..c {
                let mut s = 0.0;
                for k in 0..d {
                    let diff = x[i * d + k] - y[t * d + k];
                    s += diff * diff;
                }
                data[i * c + t] = s;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor {
                shape: vec![n, c],
                data,
            },
            Op::SqDist(a, b),
            rg,
        ))
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data.iter_mut().zip(g.data) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Back-propagates from the scalar `loss`. Gradients from any previous
    /// call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let shape = lv.shape.clone();
        self.grads = vec![None; self.nodes.len()];
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor {
            shape,
            data: vec![1.0],
        });

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            let contributions = self.local_grads(idx, &g);
            self.grads[idx] = Some(g);
            for (v, t) in contributions {
                self.accumulate(v, t);
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `idx` to its inputs, given its output
    /// gradient `g`.
    fn local_grads(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |t: &Tensor, data: Vec<f64>| Tensor {
            shape: t.shape.clone(),
            data,
        };
        match &node.op {
            Op::Leaf => Vec::new(),
            &Op::MatMul(a, b) => {
                let (m, k) = (val(a).shape[0], val(a).shape[1]);
                let n = val(b).shape[1];
                let mut res = Vec::new();
                if self.rg(a) {
                    res.push((a, like(val(a), matmul_nt(&g.data, &val(b).data, m, n, k))));
                }
                if self.rg(b) {
                    res.push((b, like(val(b), matmul_tn(&val(a).data, &g.data, m, k, n))));
                }
                res
            }
            &Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            &Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|x| -x))],
            &Op::Mul(a, b) => vec![
                (a, g.zip(val(b), |x, y| x * y)),
                (b, g.zip(val(a), |x, y| x * y)),
            ],
            &Op::Scale(a, s) => vec![(a, g.map(|x| x * s))],
            &Op::AddScalar(a) => vec![(a, g.clone())],
            &Op::Relu(a) => vec![(a, g.zip(val(a), |gx, x| if x > 0.0 { gx } else { 0.0 }))],
            &Op::Softplus(a) => vec![(a, g.zip(val(a), |gx, x| gx * sigmoid(x)))],
            &Op::Log(a) => vec![(a, g.zip(val(a), |gx, x| gx / x))],
            &Op::Exp(a) => vec![(a, g.zip(out, |gx, y| gx * y))],
            &Op::Square(a) => vec![(a, g.zip(val(a), |gx, x| 2.0 * gx * x))],
            &Op::Recip(a) => vec![(a, g.zip(out, |gx, y| -gx * y * y))],
            &Op::ClampMin(a, floor) => {
                vec![(a, g.zip(val(a), |gx, x| if x > floor { gx } else { 0.0 }))]
            }
            &Op::Sum(a) => vec![(a, Tensor::full(&val(a).shape, g.data[0]))],
            &Op::Mean(a) => {
                let n = val(a).len() as f64;
                vec![(a, Tensor::full(&val(a).shape, g.data[0] / n))]
            }
            &Op::RowSum(a) => {
                let n = val(a).shape[1];
                let data = (0..val(a).len()).map(|i| g.data[i / n]).collect();
                vec![(a, like(val(a), data))]
            }
            &Op::Transpose(a) => {
                let (m, n) = (val(a).shape[0], val(a).shape[1]);
                let mut data = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        data[i * n + j] = g.data[j * m + i];
                    }
                }
                vec![(a, like(val(a), data))]
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let len = val(p).len();
                        let t = like(val(p), g.data[offset..offset + len].to_vec());
                        offset += len;
                        (p, t)
                    })
                    .collect()
            }
            Op::ConcatCols(parts) => {
                let m = out.shape[0];
                let total = out.shape[1];
                let mut col = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let w = val(p).shape[1];
                        let mut data = Vec::with_capacity(m * w);
                        for i in 0..m {
                            data.extend_from_slice(&g.data[i * total + col..i * total + col + w]);
                        }
                        col += w;
                        (p, like(val(p), data))
                    })
                    .collect()
            }
            Op::SegmentSum(a, segments) => {
                let n = val(*a).shape[1];
                let mut data = Vec::with_capacity(val(*a).len());
                for &s in segments {
                    data.extend_from_slice(&g.data[s * n..(s + 1) * n]);
                }
                vec![(*a, like(val(*a), data))]
            }
            Op::GatherRows(a, index) => {
                let n = val(*a).shape[1];
                let mut data = vec![0.0; val(*a).len()];
                for (r, &i) in index.iter().enumerate() {
                    for j in 0..n {
                        data[i * n + j] += g.data[r * n + j];
                    }
                }
                vec![(*a, like(val(*a), data))]
            }
            &Op::BroadcastAddRow(a, row) => {
                let n = val(a).shape[1];
                let mut rg = vec![0.0; n];
                for (i, &x) in g.data.iter().enumerate() {
                    rg[i % n] += x;
                }
                vec![(a, g.clone()), (row, like(val(row), rg))]
            }
            &Op::BroadcastMulCol(a, col) => {
                let n = val(a).shape[1].max(1);
                let c = &val(col).data;
                let x = &val(a).data;
                let da = g
                    .data
                    .iter()
                    .enumerate()
                    .map(|(i, &gx)| gx * c[i / n])
                    .collect();
                let mut dc = vec![0.0; c.len()];
                for (i, &gx) in g.data.iter().enumerate() {
                    dc[i / n] += gx * x[i];
                }
                vec![(a, like(val(a), da)), (col, like(val(col), dc))]
            }
            &Op::SqDist(a, b) => {
                let (n, d) = (val(a).shape[0], val(a).shape[1]);
                let c = val(b).shape[0];
                let (x, y) = (&val(a).data, &val(b).data);
                let mut da = vec![0.0; n * d];
                let mut db = vec![0.0; c * d];
                for i in 0..n {
                    for t in 0..c {
                        let w = 2.0 * g.data[i * c + t];
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            let diff = w * (x[i * d + k] - y[t * d + k]);
                            da[i * d + k] += diff;
                            db[t * d + k] -= diff;
                        }
                    }
                }
                vec![(a, like(val(a), da)), (b, like(val(b), db))]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.softplus(x);
        assert!((tape.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
        tape.backward(y).unwrap();
        assert!((tape.grad(x).unwrap().item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
    }

    #[test]
    fn relu_blocks_negative_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(m(1, 3, &[-2.0, 0.5, 3.0]));
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn matmul_values_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(m(2, 3, &[1., 2., 3., 4., 5., 6.]));
        let b = tape.leaf(m(3, 1, &[1., 0., -1.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[-2.0, -2.0]);
        assert!(matches!(
            tape.matmul(a, a),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn segment_sum_rejects_out_of_range() {
        let mut tape = Tape::new();
        let a = tape.leaf(m(2, 1, &[1., 2.]));
        assert!(matches!(
            tape.segment_sum(a, &[0, 2], 2),
            Err(TensorError::IndexOutOfRange { .. })
        ));
        let s = tape.segment_sum(a, &[1, 1], 2).unwrap();
        assert_eq!(tape.value(s).data(), &[0.0, 3.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(m(1, 2, &[1., 2.]));
        let c = tape.constant(m(1, 2, &[3., 4.]));
        let p = tape.mul(a, c).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let a = tape.leaf(m(1, 2, &[1., 2.]));
        assert!(matches!(tape.backward(a), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn ops_do_not_mutate_inputs() {
        let mut tape = Tape::new();
        let before = m(2, 2, &[1., -2., 3., -4.]);
        let a = tape.leaf(before.clone());
        let r = tape.relu(a);
        let e = tape.exp(r);
        let s = tape.sum(e);
        tape.backward(s).unwrap();
        assert_eq!(tape.value(a), &before);
    }

    #[test]
    fn concat_cols_interleaves_rows() {
        let mut tape = Tape::new();
        let a = tape.leaf(m(2, 1, &[1., 2.]));
        let b = tape.leaf(m(2, 2, &[3., 4., 5., 6.]));
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1., 3., 4., 2., 5., 6.]);
    }
}
