//! Dense row-major linear algebra and the activation functions used by the
//! LSTM cells, the transition layers and the softmax head.
//!
//! Everything here is `f64`. Free functions take slices so that both
//! [`Vector`] and borrowed sub-ranges of larger buffers can be passed in.

use std::fmt;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vector {
        Vector((0..self.rows).map(|r| self.get(r, c)).collect())
    }

    /// `self += a ⊗ b`, i.e. `self[i,j] += a[i]·b[j]`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (row, &ai) in self.data.chunks_exact_mut(self.cols.max(1)).zip(a) {
            if ai == 0.0 {
                continue;
            }
            for (x, &bj) in row.iter_mut().zip(b) {
                *x += ai * bj;
            }
        }
    }

    /// `self[:, c] += v`.
    pub fn add_to_column(&mut self, c: usize, v: &[f64]) {
        debug_assert_eq!(v.len(), self.rows);
        for (r, &x) in v.iter().enumerate() {
            self.data[r * self.cols + c] += x;
        }
    }

    /// Same shape, all zero.
    pub fn zeros_like(&self) -> Self {
        Matrix::zeros(self.rows, self.cols)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Matrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish_non_exhaustive()
    }
}

/// Dense vector. Dereferences to `[f64]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `[a ; b]`.
    pub fn concat(a: &[f64], b: &[f64]) -> Self {
        let mut out = Vec::with_capacity(a.len() + b.len());
        out.extend_from_slice(a);
        out.extend_from_slice(b);
        Vector(out)
    }

    pub fn add_assign(&mut self, other: &[f64]) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += b;
        }
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// `m · v`.
pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::shape(format!(
            "matvec: matrix is {}x{} but vector has length {}",
            m.rows,
            m.cols,
            v.len()
        )));
    }
    if m.cols == 0 {
        return Ok(Vector::zeros(m.rows));
    }
    Ok(m.data
        .chunks_exact(m.cols)
        .map(|row| dot(row, v))
        .collect())
}

/// `mᵀ · v`.
pub fn matvec_t(m: &Matrix, v: &[f64]) -> Result<Vector> {
    if m.rows != v.len() {
        return Err(Error::shape(format!(
            "matvec_t: matrix is {}x{} but vector has length {}",
            m.rows,
            m.cols,
            v.len()
        )));
    }
    let mut out = Vector::zeros(m.cols);
    if m.cols == 0 {
        return Ok(out);
    }
    for (row, &vi) in m.data.chunks_exact(m.cols).zip(v) {
        if vi == 0.0 {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x * vi;
        }
    }
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic sigmoid, branching on sign so `exp` never overflows.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vector {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn tanh_act(v: &[f64]) -> Vector {
    v.iter().map(|x| x.tanh()).collect()
}

pub fn relu(v: &[f64]) -> Vector {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// `max z + ln Σ exp(z − max z)`.
pub fn log_sum_exp(z: &[f64]) -> Result<f64> {
    let max = max_of(z)?;
    let sum: f64 = z.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

pub fn softmax(z: &[f64]) -> Result<Vector> {
    let max = max_of(z)?;
    let mut out: Vector = z.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= sum;
    }
    Ok(out)
}

pub fn log_softmax(z: &[f64]) -> Result<Vector> {
    let lse = log_sum_exp(z)?;
    Ok(z.iter().map(|&x| x - lse).collect())
}

fn max_of(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::shape("softmax of an empty vector"));
    }
    Ok(z.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
