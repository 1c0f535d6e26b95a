//! Banded solvers used by the slab and evolution modules.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

/// Tridiagonal matrix stored by diagonals. `lower[0]` and `upper[n-1]`
/// are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Self {
        debug_assert!(lower.len() == diag.len() && upper.len() == diag.len());
        Self { lower, diag, upper }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i].abs();
                if i > 0 {
                    s += self.lower[i].abs();
                }
                if i + 1 < n {
                    s += self.upper[i].abs();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    pub fn factor(&self) -> Result<TridiagonalLu> {
        TridiagonalLu::new(self)
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let lu = self.factor()?;
        let mut x = rhs.to_vec();
        lu.solve_in_place(&mut x);
        Ok(x)
    }
}

/// Thomas-algorithm factorization, reusable for many right-hand sides.
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    lower: Vec<f64>,
    // reciprocal of the eliminated pivots
    inv_pivot: Vec<f64>,
    // modified super-diagonal
    upper: Vec<f64>,
}

impl TridiagonalLu {
    fn new(m: &Tridiagonal) -> Result<Self> {
        let n = m.len();
        if n == 0 {
            return Err(Error::Singular("empty tridiagonal system".into()));
        }
        let mut inv_pivot = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut pivot = m.diag[0];
        for i in 0..n {
            if i > 0 {
                pivot = m.diag[i] - m.lower[i] * upper[i - 1];
            }
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Singular(format!("zero pivot in row {i}")));
            }
            inv_pivot[i] = 1.0 / pivot;
            if i + 1 < n {
                upper[i] = m.upper[i] * inv_pivot[i];
            }
        }
        Ok(Self {
            lower: m.lower.clone(),
            inv_pivot,
            upper,
        })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i] * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.upper[i] * x[i + 1];
        }
    }
}

/// Block-tridiagonal matrix with dense diagonal blocks and diagonal
/// off-diagonal blocks. This is the structure of every two-dimensional
/// (space x trait) operator here: trait coupling is local to a space
/// node, space coupling is local to a trait node.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    /// Coupling of block row `i` to block `i - 1` (unused for `i = 0`).
    pub lower: Vec<Vec<f64>>,
    /// Coupling of block row `i` to block `i + 1` (unused for the last row).
    pub upper: Vec<Vec<f64>>,
}

impl BlockTridiagonal {
    pub fn block_size(&self) -> usize {
        self.diag.first().map_or(0, |d| d.nrows())
    }

    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let m = self.block_size();
        let nb = self.n_blocks();
        let mut y = vec![0.0; m * nb];
        for i in 0..nb {
            let xi = DVector::from_column_slice(&x[i * m..(i + 1) * m]);
            let yi = &self.diag[i] * xi;
            for j in 0..m {
                let mut s = yi[j];
                if i > 0 {
                    s += self.lower[i][j] * x[(i - 1) * m + j];
                }
                if i + 1 < nb {
                    s += self.upper[i][j] * x[(i + 1) * m + j];
                }
                y[i * m + j] = s;
            }
        }
        y
    }

    /// Block Thomas elimination.
    pub fn factor(&self) -> Result<BlockTridiagonalLu> {
        let m = self.block_size();
        let nb = self.n_blocks();
        let mut schur: Vec<LU<f64, Dyn, Dyn>> = Vec::with_capacity(nb);
        let mut coupling: Vec<DMatrix<f64>> = Vec::with_capacity(nb.saturating_sub(1));
        for i in 0..nb {
            let mut s = self.diag[i].clone();
            if i > 0 {
                let x: &DMatrix<f64> = &coupling[i - 1];
                for r in 0..m {
                    let l = self.lower[i][r];
                    if l != 0.0 {
                        for c in 0..m {
                            s[(r, c)] -= l * x[(r, c)];
                        }
                    }
                }
            }
            let lu = s.lu();
            if !lu.is_invertible() {
                return Err(Error::Singular(format!("singular diagonal block {i}")));
            }
            if i + 1 < nb {
                let u = DMatrix::from_diagonal(&DVector::from_column_slice(&self.upper[i]));
                let x = lu
                    .solve(&u)
                    .ok_or_else(|| Error::Singular(format!("block {i} solve failed")))?;
                coupling.push(x);
            }
            schur.push(lu);
        }
        Ok(BlockTridiagonalLu {
            m,
            lower: self.lower.clone(),
            schur,
            coupling,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factor()?.solve(rhs)
    }
}

pub struct BlockTridiagonalLu {
    m: usize,
    lower: Vec<Vec<f64>>,
    schur: Vec<LU<f64, Dyn, Dyn>>,
    coupling: Vec<DMatrix<f64>>,
}

impl BlockTridiagonalLu {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let m = self.m;
        let nb = self.schur.len();
        if rhs.len() != m * nb {
            return Err(Error::LengthMismatch {
                expected: m * nb,
                found: rhs.len(),
            });
        }
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(nb);
        for i in 0..nb {
            let mut b = DVector::from_column_slice(&rhs[i * m..(i + 1) * m]);
            if i > 0 {
                let prev = &y[i - 1];
                for r in 0..m {
                    b[r] -= self.lower[i][r] * prev[r];
                }
            }
            let yi = self.schur[i]
                .solve(&b)
                .ok_or_else(|| Error::Singular(format!("block {i} forward solve failed")))?;
            y.push(yi);
        }
        for i in (0..nb - 1).rev() {
            let corr = &self.coupling[i] * &y[i + 1];
            y[i] -= corr;
        }
        let mut out: Vec<f64> = Vec::with_capacity(m * nb);
        for yi in &y {
            out.extend(yi.iter());
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite solution".into()));
        }
        Ok(out)
    }
}
