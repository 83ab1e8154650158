//! Symmetric banded matrices in lower-band storage with an in-place Cholesky.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::{Error, Result};

/// Symmetric matrix with `a[i][j] = 0` for `|i - j| > bandwidth`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    // row i holds columns i-bw ..= i
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        let bw = bandwidth.min(n.saturating_sub(1));
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `value` to entry `(i, j)`; the mirrored entry is implied.
    /// Off-diagonal contributions must therefore be added once per pair.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        debug_assert!(i - j <= self.bw, "entry outside band");
        let k = self.slot(i, j);
        self.data[k] += value;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let mut acc = 0.0;
            for j in lo..i {
                let a = row[j + self.bw - i];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            acc += row[self.bw] * x[i];
            y[i] += acc;
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Cholesky factor `L` with `A = L Lᵀ`, stored in the same band layout.
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let n = self.n;
        let bw = self.bw;
        let mut l = self.data.clone();
        let w = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = l[i * w + (j + bw - i)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Assembly(alloc::format!(
                            "nonpositive pivot {s:e} at row {i}"
                        )));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }
}

/// Lower-triangular band factor produced by [`BandedSym::cholesky`].
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.l[k * w + (i + bw - k)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    /// `bᵀ A⁻¹ b`.
    pub fn inverse_quadratic(&self, b: &[f64]) -> f64 {
        let x = self.solve(b);
        x.iter().zip(b).map(|(a, c)| a * c).sum()
    }

    /// Smallest diagonal entry of the factor squared, a cheap pivot health probe.
    pub fn min_pivot(&self) -> f64 {
        let w = self.bw + 1;
        (0..self.n)
            .map(|i| self.l[i * w + self.bw].powi(2))
            .fold(f64::INFINITY, f64::min)
    }
}
