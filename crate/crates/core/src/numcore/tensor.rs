use std::fmt;

use crate::error::{DeqError, Result};

/// Dense row-major matrix of `f64`.
///
/// Batched features use `rows = batch`, `cols = width`; biases and
/// per-channel affines are stored as `1 × width` rows.
#[derive(Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            for (c, v) in self.row(r).iter().enumerate() {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v:.6}")?;
            }
        }
        write!(f, "]")
    }
}

impl Tensor2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DeqError::shape("Tensor2::new", (rows, cols), (data.len(), 1)));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a tensor from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// A single `1 × n` row.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn check_same(&self, other: &Tensor2, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(DeqError::shape(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn matmul(&self, b: &Tensor2) -> Result<Tensor2> {
        if self.cols != b.rows {
            return Err(DeqError::shape("matmul", self.shape(), b.shape()));
        }
        let mut out = Tensor2::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &bv) in o_row.iter_mut().zip(b.row(k)) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    /// `self · bᵀ` without materializing the transpose.
    pub fn matmul_t(&self, b: &Tensor2) -> Result<Tensor2> {
        if self.cols != b.cols {
            return Err(DeqError::shape("matmul_t", self.shape(), b.shape()));
        }
        let mut out = Tensor2::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..b.rows {
                out.data[i * b.rows + j] = dot(a_row, b.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · b` without materializing the transpose.
    pub fn t_matmul(&self, b: &Tensor2) -> Result<Tensor2> {
        if self.rows != b.rows {
            return Err(DeqError::shape("t_matmul", self.shape(), b.shape()));
        }
        let mut out = Tensor2::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = b.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (o, &bv) in o_row.iter_mut().zip(b_row) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add(&self, other: &Tensor2) -> Result<Tensor2> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor2) -> Result<Tensor2> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor2) -> Result<Tensor2> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn zip_map(
        &self,
        other: &Tensor2,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor2> {
        self.check_same(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor2) -> Result<()> {
        self.axpy(1.0, other)
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor2) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Tensor2 {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(&self, row: &Tensor2) -> Result<Tensor2> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(DeqError::shape("add_row", self.shape(), row.shape()));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Column sums as a `1 × cols` row.
    pub fn sum_rows(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor2) -> Result<f64> {
        self.check_same(other, "dot")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn frob_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Matrix product; see [`Tensor2::matmul`].
pub fn matmul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    a.matmul(b)
}

/// `‖z_new − z_old‖_F / ‖z_old‖_F`, returning the numerator alone when the
/// old iterate is exactly zero (the first step from a zero initialization).
pub fn rel_diff_norm(z_new: &Tensor2, z_old: &Tensor2) -> Result<f64> {
    if z_new.shape() != z_old.shape() {
        return Err(DeqError::shape("rel_diff_norm", z_new.shape(), z_old.shape()));
    }
    Ok(rel_diff_slices(z_new.data(), z_old.data()))
}

pub(crate) fn rel_diff_slices(new: &[f64], old: &[f64]) -> f64 {
    let num = new
        .iter()
        .zip(old)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den = norm(old);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
