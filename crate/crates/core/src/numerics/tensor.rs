use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
///
/// Vectors are rank 1 and behave as a single row wherever a matrix is
/// expected (`rows() == 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<S>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows
            .iter()
            .flat_map(|r| r.iter().map(|&x| S::lit(x)))
            .collect();
        Self {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Entries drawn iid from `N(0, std²)`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            S::lit(z * std)
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count when viewed as a matrix (rank-1 tensors are one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Converts element type, e.g. for loading binary64 data into an `f32` model.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| T::lit(x.to_f64_lossy())).collect(),
        }
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sub")?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "mul")?;
        Ok(self.zip_with(other, |a, b| a * b))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
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

    pub fn scale(&self, s: S) -> Self {
        self.map(|x| x * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: S, other: &Self) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_row(&self, bias: &Self) -> Result<Self> {
        let c = self.cols();
        if bias.len() != c {
            return Err(Error::shape(
                "add_row",
                format!("bias of {} for {c} columns", bias.len()),
            ));
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(c) {
            for (x, &b) in row.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        Ok(out)
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape, other.shape),
            ));
        }
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self · otherᵀ`, contracting the column dimensions of both.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let (n, k2) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape(
                "matmul_t",
                format!("{:?} x {:?}^T", self.shape, other.shape),
            ));
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b = &other.data[j * k..(j + 1) * k];
                out.push(dot(a, b));
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `selfᵀ · other`, contracting the row dimensions of both.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        let (k, m) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape(
                "t_matmul",
                format!("{:?}^T x {:?}", self.shape, other.shape),
            ));
        }
        let mut out = vec![S::zero(); m * n];
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                let o_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                data.push(self.data[i * n + j]);
            }
        }
        Self {
            shape: vec![n, m],
            data,
        }
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Self {
        let c = self.cols();
        let mut out = self.clone();
        if c == 0 {
            return out;
        }
        for row in out.data.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        out
    }

    /// Per-row standardization followed by the `gamma`/`beta` affine map.
    pub fn layernorm(&self, gamma: &Self, beta: &Self, eps: S) -> Result<Self> {
        let c = self.cols();
        if gamma.len() != c || beta.len() != c {
            return Err(Error::shape(
                "layernorm",
                format!("{c} features, gamma {} beta {}", gamma.len(), beta.len()),
            ));
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(c) {
            let (mean, inv_std) = row_stats(row, eps);
            for ((x, &g), &b) in row.iter_mut().zip(&gamma.data).zip(&beta.data) {
                *x = (*x - mean) * inv_std * g + b;
            }
        }
        Ok(out)
    }

    pub fn gelu(&self) -> Self {
        self.map(gelu)
    }

    /// Selects columns `idx` (in order) from every row.
    pub fn gather_cols(&self, idx: &[usize]) -> Result<Self> {
        let c = self.cols();
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(Error::shape("gather_cols", format!("column {bad} of {c}")));
        }
        let r = self.rows();
        let mut data = Vec::with_capacity(r * idx.len());
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            data.extend(idx.iter().map(|&j| row[j]));
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = idx.len();
        Ok(Self { shape, data })
    }

    /// Selects rows `idx` (in order); embedding lookup is this op.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Self> {
        let (r, c) = (self.rows(), self.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {r}")));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Ok(Self {
            shape: vec![idx.len(), c],
            data,
        })
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather_cols(&idx)
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        let (r, c) = (self.rows(), self.cols());
        if start + len > r {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {r}", start + len),
            ));
        }
        Ok(Self {
            shape: vec![len, c],
            data: self.data[start * c..(start + len) * c].to_vec(),
        })
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let r = parts.first().map_or(0, |p| p.rows());
        if parts.iter().any(|p| p.rows() != r) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Self {
            shape: vec![r, total],
            data,
        })
    }

    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let c = parts.first().map_or(0, |p| p.cols());
        if parts.iter().any(|p| p.cols() != c) {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let rows: usize = parts.iter().map(|p| p.rows()).sum();
        let mut data = Vec::with_capacity(rows * c);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![rows, c],
            data,
        })
    }
}

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// `(mean, 1/sqrt(var + eps))` with the population variance.
#[inline]
pub(crate) fn row_stats<S: Scalar>(row: &[S], eps: S) -> (S, S) {
    let n = S::lit(row.len() as f64);
    let mean = row.iter().copied().sum::<S>() / n;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n;
    (mean, (var + eps).sqrt().recip())
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let inner = S::lit(GELU_K) * (x + S::lit(GELU_C) * x * x * x);
    S::lit(0.5) * x * (S::one() + inner.tanh())
}

#[inline]
pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let k = S::lit(GELU_K);
    let c = S::lit(GELU_C);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    let half = S::lit(0.5);
    half * (S::one() + t) + half * x * (S::one() - t * t) * k * (S::one() + S::lit(3.0) * c * x * x)
}
