//! Dense rank-1 and rank-2 arrays with deterministic, sequential reductions.
//!
//! Every reduction runs left to right in index order. No operation here is
//! parallel or fused, so results are bitwise reproducible across runs and
//! machines with the same float semantics.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand_distr::{Distribution as _, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "f32")]
    Single,
    #[serde(rename = "f64")]
    Double,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "single" => Ok(Precision::Single),
            "f64" | "double" => Ok(Precision::Double),
            other => Err(config_err(format!("unknown precision {other:?} (expected f32 or f64)"))),
        }
    }
}

/// Scalar element type; implemented for `f32` and `f64`.
pub trait Real:
    Float
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `dst += alpha * src`
#[inline]
pub fn axpy<T: Real>(dst: &mut [T], alpha: T, src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vector<T> {
    data: Vec<T>,
}

impl<T: Real> Vector<T> {
    pub fn new(data: Vec<T>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { data: vec![T::zero(); dim] }
    }

    pub fn from_f64(values: &[f64]) -> Self {
        Self { data: values.iter().map(|&v| T::from_f64(v)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        check_same_dim(self, other, "dot")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same_dim(self, other, "add")?;
        Ok(Self::new(self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same_dim(self, other, "sub")?;
        Ok(Self::new(self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect()))
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self::new(self.data.iter().map(|&a| a * alpha).collect())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        check_same_dim(self, other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// L2-normalised copy; a (near-)zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n.as_f64() < COSINE_EPS {
            self.clone()
        } else {
            self.scale(T::one() / n)
        }
    }

    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        positions
            .iter()
            .map(|&p| {
                self.data.get(p).copied().ok_or_else(|| {
                    shape_err(format!("position {p} out of range for vector of dim {}", self.dim()))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    pub fn cast<U: Real>(&self) -> Vector<U> {
        Vector::new(self.data.iter().map(|v| U::from_f64(v.as_f64())).collect())
    }
}

impl<T: Debug> Debug for Vector<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vector{:?}", self.data)
    }
}

impl<T> std::ops::Index<usize> for Vector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> std::ops::IndexMut<usize> for Vector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

fn check_same_dim<T: Real>(a: &Vector<T>, b: &Vector<T>, op: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(shape_err(format!("{op}: dims {} and {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(format!(
                "{} elements for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Build from nested `f64` rows (test and fixture convenience).
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::from_f64(v))).collect();
        Self::new(rows.len(), cols, data)
    }

    /// Stack vectors as the columns of a `dim x n` matrix.
    pub fn from_columns(dim: usize, columns: &[Vector<T>]) -> Result<Self> {
        if let Some(bad) = columns.iter().find(|c| c.dim() != dim) {
            return Err(shape_err(format!("column of dim {} in a {dim}-row matrix", bad.dim())));
        }
        Ok(Self::from_fn(dim, columns.len(), |i, j| columns[j][i]))
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector<T> {
        Vector::new((0..self.rows).map(|i| self.get(i, j)).collect())
    }

    pub fn columns(&self) -> impl Iterator<Item = Vector<T>> + '_ {
        (0..self.cols).map(|j| self.column(j))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Keep the columns listed in `indices`, in that order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.cols) {
            return Err(shape_err(format!("column {bad} out of range ({} columns)", self.cols)));
        }
        Ok(Self::from_fn(self.rows, indices.len(), |i, k| self.get(i, indices[k])))
    }

    /// Column-wise concatenation `[self, other]`.
    pub fn hcat(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows && self.cols > 0 && other.cols > 0 {
            return Err(shape_err(format!(
                "hcat of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let rows = if self.cols > 0 { self.rows } else { other.rows };
        Ok(Self::from_fn(rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self.get(i, j)
            } else {
                other.get(i, j - self.cols)
            }
        }))
    }

    pub fn matvec(&self, v: &Vector<T>) -> Result<Vector<T>> {
        if self.cols != v.dim() {
            return Err(shape_err(format!(
                "matvec of {}x{} with vector of dim {}",
                self.rows,
                self.cols,
                v.dim()
            )));
        }
        Ok(Vector::new((0..self.rows).map(|i| dot(self.row(i), v.as_slice())).collect()))
    }

    /// `selfᵀ v`
    pub fn matvec_t(&self, v: &Vector<T>) -> Result<Vector<T>> {
        if self.rows != v.dim() {
            return Err(shape_err(format!(
                "transposed matvec of {}x{} with vector of dim {}",
                self.rows,
                self.cols,
                v.dim()
            )));
        }
        let mut out = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            axpy(&mut out, v[i], self.row(i));
        }
        Ok(Vector::new(out))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| a * alpha).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(format!("add_assign of {:?} and {:?}", self.shape(), other.shape())));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(shape_err(format!("{op} of {:?} and {:?}", self.shape(), other.shape())));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape() != other.shape() {
            return Err(shape_err(format!("diff of {:?} and {:?}", self.shape(), other.shape())));
        }
        Ok(self.data.iter().zip(&other.data).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn frobenius_norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == T::zero())
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }
}

impl<T: Debug> Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[i * self.cols..(i + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

/// Standard matrix product. Each output element accumulates over the inner
/// index in increasing order.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(shape_err(format!(
            "matmul of {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            axpy(out_row, a.get(i, k), b.row(k));
        }
    }
    Ok(out)
}

/// `a bᵀ`, each element a contiguous dot product.
pub fn matmul_nt<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(shape_err(format!(
            "matmul_nt of {}x{} and ({}x{})ᵀ",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(ar, b.row(j));
        }
    }
    Ok(out)
}

/// `aᵀ b`
pub fn matmul_tn<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return Err(shape_err(format!(
            "matmul_tn of ({}x{})ᵀ and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let br = b.row(k);
        for i in 0..a.cols {
            let aki = a.get(k, i);
            if aki != T::zero() {
                axpy(&mut out.data[i * b.cols..(i + 1) * b.cols], aki, br);
            }
        }
    }
    Ok(out)
}

pub fn outer<T: Real>(u: &Vector<T>, v: &Vector<T>) -> Matrix<T> {
    Matrix::from_fn(u.dim(), v.dim(), |i, j| u[i] * v[j])
}

/// Numerically stable softmax (max subtraction).
pub fn softmax<T: Real>(v: &Vector<T>) -> Vector<T> {
    let mut out = v.as_slice().to_vec();
    softmax_in_place(&mut out);
    Vector::new(out)
}

pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    if v.is_empty() {
        return;
    }
    let max = v.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut total = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Norm below which a vector counts as zero for [`cosine`].
pub const COSINE_EPS: f64 = 1e-12;

/// Cosine similarity, defined as 0 when either side is (near-)zero.
pub fn cosine<T: Real>(u: &Vector<T>, v: &Vector<T>) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(shape_err(format!("cosine of dims {} and {}", u.dim(), v.dim())));
    }
    Ok(cosine_slices(u.as_slice(), v.as_slice()))
}

pub(crate) fn cosine_slices<T: Real>(u: &[T], v: &[T]) -> f64 {
    let (mut uv, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.as_f64(), b.as_f64());
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    let (nu, nv) = (uu.sqrt(), vv.sqrt());
    if nu < COSINE_EPS || nv < COSINE_EPS {
        return 0.0;
    }
    (uv / (nu * nv)).clamp(-1.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Distribution {
    pub fn standard_normal() -> Self {
        Distribution::Gaussian { mean: 0.0, std: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Gaussian { mean, std } => {
                if !mean.is_finite() || !std.is_finite() || std < 0.0 {
                    return Err(config_err(format!("gaussian({mean}, {std})")));
                }
            }
            Distribution::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(config_err(format!("uniform({lo}, {hi})")));
                }
            }
        }
        Ok(())
    }

    /// `n` draws from the stream seeded by `seed`. Samples are drawn in `f64`
    /// so both precisions see the same stream.
    pub fn sample_f64(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = rng_from_seed(seed);
        Ok(match *self {
            Distribution::Gaussian { mean, std } => {
                if std == 0.0 {
                    vec![mean; n]
                } else {
                    let normal = Normal::new(mean, std).map_err(|e| config_err(e.to_string()))?;
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                }
            }
            Distribution::Uniform { lo, hi } => {
                if lo == hi {
                    vec![lo; n]
                } else {
                    let uniform = Uniform::new(lo, hi).map_err(|e| config_err(e.to_string()))?;
                    (0..n).map(|_| uniform.sample(&mut rng)).collect()
                }
            }
        })
    }
}

pub fn random_matrix<T: Real>(
    rows: usize,
    cols: usize,
    distribution: Distribution,
    seed: u64,
) -> Result<Matrix<T>> {
    let data = distribution.sample_f64(rows * cols, seed)?;
    Matrix::new(rows, cols, data.into_iter().map(T::from_f64).collect())
}

pub fn random_vector<T: Real>(dim: usize, distribution: Distribution, seed: u64) -> Result<Vector<T>> {
    Ok(Vector::new(distribution.sample_f64(dim, seed)?.into_iter().map(T::from_f64).collect()))
}

/// Neumaier-compensated sum. Order-independent to within a few ulps, which
/// keeps aggregated metrics stable under any worker count.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn compensated_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(compensated_sum(values.iter().copied()) / values.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_zero_and_hand_case() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
        assert!(matmul(&Matrix::zeros(2, 2), &a).unwrap().is_zero());
        let col = m(&[&[1.0], &[1.0]]);
        assert_eq!(matmul(&a, &col).unwrap(), m(&[&[3.0], &[7.0]]));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let a: Matrix<f64> = random_matrix(5, 3, Distribution::standard_normal(), 1).unwrap();
        let b: Matrix<f64> = random_matrix(4, 3, Distribution::standard_normal(), 2).unwrap();
        let c: Matrix<f64> = random_matrix(5, 4, Distribution::standard_normal(), 3).unwrap();
        let nt = matmul_nt(&a, &b).unwrap();
        assert!(nt.max_abs_diff(&matmul(&a, &b.transpose()).unwrap()).unwrap() < 1e-14);
        let tn = matmul_tn(&a, &c).unwrap();
        assert!(tn.max_abs_diff(&matmul(&a.transpose(), &c).unwrap()).unwrap() < 1e-14);
    }

    #[test]
    fn outer_cases() {
        let u = Vector::<f64>::from_f64(&[1.0, 2.0]);
        let v = Vector::<f64>::from_f64(&[3.0, 4.0]);
        assert_eq!(outer(&u, &v), m(&[&[3.0, 4.0], &[6.0, 8.0]]));
        assert!(outer(&Vector::zeros(3), &v).is_zero());
        // rank one: every 2x2 minor vanishes
        let o = outer(&Vector::<f64>::from_f64(&[1.5, -2.0, 0.5]), &Vector::from_f64(&[2.0, 7.0, -1.0]));
        for (i, k) in [(0, 1), (0, 2), (1, 2)] {
            for (j, l) in [(0, 1), (0, 2), (1, 2)] {
                let minor = o.get(i, j) * o.get(k, l) - o.get(i, l) * o.get(k, j);
                assert!(minor.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&Vector::<f64>::from_f64(&[0.0, 0.0]));
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
        let s = softmax(&Vector::<f64>::from_f64(&[42.0, 42.0, 42.0]));
        for v in s.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&Vector::<f64>::from_f64(&[0.0, 3f64.ln()]));
        assert!((s[0] - 0.25).abs() < 1e-15);
        assert!((s[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cosine_cases() {
        let u = Vector::<f64>::from_f64(&[1.0, 2.0]);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&Vector::<f64>::from_f64(&[1.0, 0.0]), &Vector::from_f64(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&u, &Vector::from_f64(&[2.0, 1.0])).unwrap();
        assert!((c - 0.8).abs() < 1e-15);
        assert_eq!(cosine(&Vector::<f64>::zeros(2), &u).unwrap(), 0.0);
        assert!(cosine(&u, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn random_matrix_contracts() {
        let z: Matrix<f64> = random_matrix(3, 4, Distribution::Uniform { lo: 0.0, hi: 0.0 }, 9).unwrap();
        assert!(z.is_zero());
        let a: Matrix<f32> = random_matrix(6, 6, Distribution::standard_normal(), 5).unwrap();
        let b: Matrix<f32> = random_matrix(6, 6, Distribution::standard_normal(), 5).unwrap();
        assert_eq!(a, b);
        let g: Matrix<f64> = random_matrix(100, 100, Distribution::standard_normal(), 2024).unwrap();
        let mean = g.as_slice().iter().sum::<f64>() / 1e4;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!(random_matrix::<f64>(2, 2, Distribution::Uniform { lo: 1.0, hi: 0.0 }, 0).is_err());
        assert!(random_matrix::<f64>(2, 2, Distribution::Gaussian { mean: 0.0, std: -1.0 }, 0).is_err());
    }

    #[test]
    fn compensated_sum_is_accurate() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(v in vec_strategy(7), c in -50.0f64..50.0) {
            let s = softmax(&Vector::<f64>::new(v.clone()));
            prop_assert!((s.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.as_slice().iter().all(|&p| p > 0.0));
            let shifted = softmax(&Vector::<f64>::new(v.iter().map(|x| x + c).collect()));
            prop_assert!(s.max_abs_diff(&shifted).unwrap() < 1e-12);
            let s32 = softmax(&Vector::<f32>::new(v.iter().map(|&x| x as f32).collect()));
            prop_assert!((s32.as_slice().iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn matmul_is_associative(seed in 0u64..10_000) {
            let d = Distribution::standard_normal();
            let a: Matrix<f64> = random_matrix(8, 8, d, seed).unwrap();
            let b: Matrix<f64> = random_matrix(8, 8, d, seed + 1).unwrap();
            let c: Matrix<f64> = random_matrix(8, 8, d, seed + 2).unwrap();
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-10);
        }

        #[test]
        fn outer_times_vector_factorises(u in vec_strategy(5), v in vec_strategy(4), w in vec_strategy(4)) {
            let (u, v, w) = (Vector::<f64>::new(u), Vector::new(v), Vector::new(w));
            let lhs = outer(&u, &v).matvec(&w).unwrap();
            let rhs = u.scale(v.dot(&w).unwrap());
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
        }

        #[test]
        fn cosine_is_scale_invariant(u in vec_strategy(6), v in vec_strategy(6), a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let (u, v) = (Vector::<f64>::new(u), Vector::new(v));
            let base = cosine(&u, &v).unwrap();
            let scaled = cosine(&u.scale(a), &v.scale(b)).unwrap();
            prop_assert!((base - scaled).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
