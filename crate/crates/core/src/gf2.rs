//! Dense matrices over the two-element field.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gf2Matrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Gf2Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![false; rows * cols] }
    }

    /// Entries are reduced mod 2.
    pub fn from_counts(rows: usize, cols: usize, counts: impl Fn(usize, usize) -> usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, counts(i, j) % 2 == 1);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|b| !b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                if self.get(i, k) {
                    for j in 0..other.cols {
                        if other.get(k, j) {
                            let idx = i * out.cols + j;
                            out.data[idx] ^= true;
                        }
                    }
                }
            }
        }
        out
    }

    /// Rank by Gaussian elimination.
    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        let mut rank = 0;
        for col in 0..m.cols {
            let Some(pivot) = (rank..m.rows).find(|&r| m.get(r, col)) else { continue };
            if pivot != rank {
                for j in 0..m.cols {
                    m.data.swap(pivot * m.cols + j, rank * m.cols + j);
                }
            }
            for r in 0..m.rows {
                if r != rank && m.get(r, col) {
                    for j in col..m.cols {
                        let v = m.get(rank, j);
                        if v {
                            let idx = r * m.cols + j;
                            m.data[idx] ^= true;
                        }
                    }
                }
            }
            rank += 1;
            if rank == m.rows {
                break;
            }
        }
        rank
    }

    /// Rows as 0/1 vectors.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| self.get(i, j) as u8).collect()).collect()
    }
}
