//! Dense f64 kernels.
//!
//! Vectors are plain slices; [`Matrix`] is a row-major buffer with a shape.
//! All reductions accumulate left to right so results are reproducible
//! bit for bit regardless of how callers schedule work around them.

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                context: "Matrix::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape {
                    context: "Matrix::from_rows",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec", self.cols, v.len())?;
        Ok(self.iter_rows().map(|r| dot_unchecked(r, v)).collect())
    }

    /// `selfᵀ · v`.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec_t", self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &vi) in self.iter_rows().zip(v) {
            for (o, &rij) in out.iter_mut().zip(r) {
                *o += rij * vi;
            }
        }
        Ok(out)
    }
}

#[inline]
fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::Shape {
            context,
            expected,
            got,
        })
    } else {
        Ok(())
    }
}

#[inline]
pub(crate) fn dot_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in u.iter().zip(v) {
        acc += a * b;
    }
    acc
}

pub fn dot(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len("dot", u.len(), v.len())?;
    Ok(dot_unchecked(u, v))
}

/// Entrywise sign with `sign(0) = 0`.
pub fn sign(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sign_scalar(x)).collect()
}

#[inline]
pub fn sign_scalar(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Entrywise `max(lo, min(v, hi))`.
pub fn clamp(v: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    check_len("clamp", v.len(), lo.len())?;
    check_len("clamp", v.len(), hi.len())?;
    v.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&x, (&l, &h))| {
            if l > h {
                Err(Error::InvalidArgument(format!(
                    "clamp bounds inverted: lo {l} > hi {h}"
                )))
            } else {
                Ok(x.min(h).max(l))
            }
        })
        .collect()
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x.abs())
}

pub fn l2_norm_sq(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    l2_norm_sq(v).sqrt()
}

pub fn linf_dist(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len("linf_dist", u.len(), v.len())?;
    Ok(u.iter()
        .zip(v)
        .fold(0.0, |acc: f64, (a, b)| acc.max((a - b).abs())))
}

/// `y += a · x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len("axpy", y.len(), x.len())?;
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
    Ok(())
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
