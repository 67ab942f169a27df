//! Symmetric tridiagonal matrices and their LDLᵀ factorization.

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix stored by diagonals.
///
/// `off[i]` is the entry at `(i, i + 1)` and `(i + 1, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Principal submatrix on rows/columns `lo..hi`.
    pub fn block(&self, lo: usize, hi: usize) -> Self {
        Self {
            diag: self.diag[lo..hi].to_vec(),
            off: self.off[lo..hi.saturating_sub(1).max(lo)].to_vec(),
        }
    }

    /// Principal submatrix with the first and last row/column removed.
    pub fn interior(&self) -> Self {
        self.block(1, self.len() - 1)
    }

    /// `self * ca + other * cb`
    pub fn combine(&self, ca: f64, other: &Self, cb: f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self {
            diag: self
                .diag
                .iter()
                .zip(&other.diag)
                .map(|(a, b)| ca * a + cb * b)
                .collect(),
            off: self
                .off
                .iter()
                .zip(&other.off)
                .map(|(a, b)| ca * a + cb * b)
                .collect(),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        assert_eq!(x.len(), n);
        assert_eq!(y.len(), n);
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * x[i + 1];
            }
            y[i] = acc;
        }
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.len();
        let mut acc = 0.0;
        for i in 0..n {
            acc += x[i] * self.diag[i] * y[i];
            if i + 1 < n {
                acc += self.off[i] * (x[i] * y[i + 1] + x[i + 1] * y[i]);
            }
        }
        acc
    }

    /// Max-row-sum norm.
    pub fn norm_inf(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i].abs();
                if i > 0 {
                    s += self.off[i - 1].abs();
                }
                if i + 1 < n {
                    s += self.off[i].abs();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    pub fn factor(&self) -> Result<LdlFactor> {
        LdlFactor::new(self)
    }
}

/// `A = L D Lᵀ` with unit lower bidiagonal `L`.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl LdlFactor {
    pub fn new(a: &SymTridiag) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::Internal("empty tridiagonal system".into()));
        }
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n - 1];
        d[0] = a.diag[0];
        for i in 1..n {
            if d[i - 1] <= 0.0 || !d[i - 1].is_finite() {
                return Err(Error::Internal(format!(
                    "tridiagonal matrix is not positive definite (pivot {} = {:e})",
                    i - 1,
                    d[i - 1]
                )));
            }
            l[i - 1] = a.off[i - 1] / d[i - 1];
            d[i] = a.diag[i] - l[i - 1] * a.off[i - 1];
        }
        if d[n - 1] <= 0.0 || !d[n - 1].is_finite() {
            return Err(Error::Internal(format!(
                "tridiagonal matrix is not positive definite (pivot {} = {:e})",
                n - 1,
                d[n - 1]
            )));
        }
        Ok(Self { d, l })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.d.len();
        assert_eq!(x.len(), n);
        for i in 1..n {
            x[i] -= self.l[i - 1] * x[i - 1];
        }
        for (xi, di) in x.iter_mut().zip(&self.d) {
            *xi /= di;
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.l[i] * x[i + 1];
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
