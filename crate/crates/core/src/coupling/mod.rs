//! Base matrices and design operators.
//!
//! An `(omega, lambda, rho)` base matrix `W` has `R = lambda + omega - 1` rows
//! and `C = lambda` columns. Column `c` carries `omega` band entries
//! `(1 - rho)/omega` in rows `c..c+omega-1` and `rho/(lambda - 1)` elsewhere,
//! so every column sums to one. A design matrix is cut into `R x C` equal
//! blocks; block `(r, c)` has i.i.d. entries of variance `W_rc / (n/R)`.
//!
//! Indices are 0-based throughout; [`BlockMaps::row_block_1based`] and
//! friends report the 1-based numbering used in tables and figures.

mod operator;

pub use operator::{DesignOperator, OperatorKind, DEFAULT_DENSE_BUDGET};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMatrix {
    omega: usize,
    lambda: usize,
    rho: f64,
    rows: usize,
    cols: usize,
    w: Vec<f64>,
}

impl BaseMatrix {
    /// Build an `(omega, lambda, rho)` base matrix.
    pub fn new(omega: usize, lambda: usize, rho: f64) -> Result<Self> {
        if omega > 1 && lambda < 2 * omega - 1 {
            return Err(invalid(format!(
                "coupling length lambda = {lambda} must be at least 2*omega - 1 = {}",
                2 * omega - 1
            )));
        }
        Self::with_short_length(omega, lambda, rho)
    }

    /// Like [`BaseMatrix::new`] but without the `lambda >= 2*omega - 1`
    /// requirement, for small operator checks such as `R = 3, C = 2`.
    pub fn with_short_length(omega: usize, lambda: usize, rho: f64) -> Result<Self> {
        if omega < 1 {
            return Err(invalid("coupling width omega must be at least 1"));
        }
        if lambda < 1 {
            return Err(invalid("coupling length lambda must be at least 1"));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(invalid(format!("rho must lie in [0, 1), got {rho}")));
        }
        if lambda == 1 && rho > 0.0 {
            return Err(invalid("rho > 0 needs lambda >= 2 (no off-band entries otherwise)"));
        }
        let rows = lambda + omega - 1;
        let cols = lambda;
        let band = (1.0 - rho) / omega as f64;
        let off = if lambda > 1 { rho / (lambda - 1) as f64 } else { 0.0 };
        let mut w = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                w[r * cols + c] = if c <= r && r < c + omega { band } else { off };
            }
        }
        Ok(Self {
            omega,
            lambda,
            rho,
            rows,
            cols,
            w,
        })
    }

    /// The 1x1 base matrix `[1]` of an i.i.d. design.
    pub fn trivial() -> Self {
        Self::new(1, 1, 0.0).expect("trivial base matrix is valid")
    }

    pub fn omega(&self) -> usize {
        self.omega
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Number of row blocks `R`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of column blocks `C`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_trivial(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.w[r * self.cols + c]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.w
    }

    pub fn column_sum(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self.get(r, c)).sum()
    }

    /// `R / C = 1 + (omega - 1)/lambda`, the rate-loss factor.
    pub fn theta(&self) -> f64 {
        self.rows as f64 / self.cols as f64
    }

    /// Inner user density `(R/C) mu` of each block.
    pub fn mu_inner(&self, mu: f64) -> f64 {
        self.theta() * mu
    }

    /// Row and column block maps for an `n x LB` design.
    pub fn block_maps(&self, n: usize, l: usize, b: usize) -> Result<BlockMaps> {
        BlockMaps::new(self, n, l, b)
    }
}

/// Contiguous equal-size block partition of rows and columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMaps {
    pub n: usize,
    pub cols_total: usize,
    pub row_block_len: usize,
    pub col_block_len: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockMaps {
    pub fn new(base: &BaseMatrix, n: usize, l: usize, b: usize) -> Result<Self> {
        if n == 0 || n % base.rows() != 0 {
            return Err(invalid(format!(
                "code length n = {n} must be a positive multiple of R = {}",
                base.rows()
            )));
        }
        if l == 0 || l % base.cols() != 0 {
            return Err(invalid(format!(
                "number of users L = {l} must be a positive multiple of C = {}",
                base.cols()
            )));
        }
        if b == 0 {
            return Err(invalid("section length must be positive"));
        }
        Ok(Self {
            n,
            cols_total: l * b,
            row_block_len: n / base.rows(),
            col_block_len: l * b / base.cols(),
            rows: base.rows(),
            cols: base.cols(),
        })
    }

    /// 0-based row block of 0-based row `i`.
    #[inline]
    pub fn row_block(&self, i: usize) -> usize {
        i / self.row_block_len
    }

    /// 0-based column block of 0-based column `j`.
    #[inline]
    pub fn col_block(&self, j: usize) -> usize {
        j / self.col_block_len
    }

    /// 1-based row block of 1-based row `i`.
    pub fn row_block_1based(&self, i: usize) -> usize {
        self.row_block(i - 1) + 1
    }

    /// 1-based column block of 1-based column `j`.
    pub fn col_block_1based(&self, j: usize) -> usize {
        self.col_block(j - 1) + 1
    }

    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        r * self.row_block_len..(r + 1) * self.row_block_len
    }

    pub fn col_range(&self, c: usize) -> std::ops::Range<usize> {
        c * self.col_block_len..(c + 1) * self.col_block_len
    }

    /// Full row map `[n] -> [R]` (0-based).
    pub fn row_map(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.row_block(i)).collect()
    }

    /// Full column map `[LB] -> [C]` (0-based).
    pub fn col_map(&self) -> Vec<usize> {
        (0..self.cols_total).map(|j| self.col_block(j)).collect()
    }
}
