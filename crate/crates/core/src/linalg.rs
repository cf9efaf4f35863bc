//! Small dense linear algebra kernels used by the Newton solver, the adjoint
//! pass and the covariance handling.
//!
//! Matrices are row-major `Vec<f64>` of size `n * n`. The networks this crate
//! targets produce Jacobians of a few hundred unknowns, where a dense LU with
//! partial pivoting is faster than any sparse symbolic analysis would pay off.

use std::cell::Cell;

/// Square row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds from nested rows. Panics if the rows are ragged or not square.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "row {i} has wrong length");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `xᵀ A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let (a, b) = (self[(i, j)], self[(j, i)]);
                if (a - b).abs() > tol * (1.0 + a.abs().max(b.abs())) {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Returned when elimination meets a pivot column with no usable entry.
/// `column` is the index of the unknown that could not be eliminated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPivot {
    pub column: usize,
}

/// LU factorization `P A = L U` with partial pivoting.
///
/// Keeps a counter of triangular solves so callers can assert how many
/// linear systems an algorithm actually needed.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    solves: Cell<usize>,
}

impl LuFactor {
    pub fn new(a: &DenseMatrix) -> Result<Self, SingularPivot> {
        let n = a.n;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        let tiny = scale * 1e-14;

        for k in 0..n {
            let (p, pmax) =
                (k..n)
                    .map(|i| (i, lu[i * n + k].abs()))
                    .fold(
                        (k, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if !(pmax > tiny) {
                return Err(SingularPivot { column: k });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let f = lu[i * n + k] / pivot;
                if f == 0.0 {
                    continue;
                }
                lu[i * n + k] = f;
                for j in (k + 1)..n {
                    lu[i * n + j] -= f * lu[k * n + j];
                }
            }
        }
        Ok(Self {
            n,
            lu,
            perm,
            solves: Cell::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of `solve` / `solve_transpose` calls made so far.
    pub fn solve_count(&self) -> usize {
        self.solves.get()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        self.solves.set(self.solves.get() + 1);
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }

    /// Solves `Aᵀ x = b` with the same factors: `Uᵀ Lᵀ P x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        self.solves.set(self.solves.get() + 1);
        let n = self.n;
        let mut z = b.to_vec();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[j * n + i] * z[j]).sum();
            z[i] = (z[i] - s) / self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|j| self.lu[j * n + i] * z[j]).sum();
            z[i] -= s;
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = A` for a symmetric positive
/// semidefinite `A`.
///
/// Columns whose pivot falls within `tol` of zero are zeroed (degenerate
/// directions such as parameters with zero variance); a pivot below `-tol`
/// means `A` is not PSD and the offending column is returned as the error.
pub fn psd_cholesky(a: &DenseMatrix, tol: f64) -> Result<DenseMatrix, usize> {
    let n = a.dim();
    let mut l = DenseMatrix::zeros(n);
    let scale = (0..n)
        .fold(0.0_f64, |m, i| m.max(a[(i, i)].abs()))
        .max(1e-300);
    let eps = tol * scale;
    for j in 0..n {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if d < -eps {
            return Err(j);
        }
        if d <= eps {
            // any remaining coupling in this column must vanish too
            for i in (j + 1)..n {
                let r = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
                if r.abs() > eps.sqrt() * scale.sqrt() {
                    return Err(j);
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let r = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = r / djj;
        }
    }
    Ok(l)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
