//! Correlation matrices, Cholesky factorization and PSD repair.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Off-diagonal entries are clamped to this magnitude before factorization.
pub const MAX_ABS_CORRELATION: f64 = 0.999;
/// Eigenvalue floor used by [`nearest_correlation`].
pub const EIGEN_FLOOR: f64 = 1e-6;
/// Matrices whose smallest eigenvalue is at least this are left untouched.
const ACCEPT_EIGEN: f64 = 1e-7;

/// Symmetric matrix with unit diagonal and entries in [-1, 1], row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        Self { dim, entries }
    }

    /// Equicorrelated matrix with every off-diagonal entry equal to `rho`.
    pub fn equicorrelated(dim: usize, rho: f64) -> Result<Self> {
        let mut m = Self::identity(dim);
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    m.entries[i * dim + j] = rho;
                }
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(domain("correlation matrix must be square"));
        }
        let m = Self {
            dim,
            entries: rows.iter().flatten().copied().collect(),
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim;
        for i in 0..n {
            if self.get(i, i) != 1.0 {
                return Err(domain(format!("diagonal entry {i} is {} (expected 1)", self.get(i, i))));
            }
            for j in 0..n {
                let v = self.get(i, j);
                if !v.is_finite() || v.abs() > 1.0 {
                    return Err(domain(format!("entry ({i},{j}) = {v} outside [-1, 1]")));
                }
                if (v - self.get(j, i)).abs() > 1e-12 {
                    return Err(domain(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Set a symmetric pair of off-diagonal entries.
    pub fn set_pair(&mut self, i: usize, j: usize, value: f64) {
        assert!(i != j, "diagonal of a correlation matrix is fixed");
        let v = value.clamp(-1.0, 1.0);
        self.entries[i * self.dim + j] = v;
        self.entries[j * self.dim + i] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim.max(1)).take(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// Principal sub-matrix on the given indices, in the given order.
    pub fn restrict(&self, idx: &[usize]) -> Self {
        let n = idx.len();
        let mut entries = Vec::with_capacity(n * n);
        for &i in idx {
            for &j in idx {
                entries.push(self.get(i, j));
            }
        }
        Self { dim: n, entries }
    }

    pub fn is_identity(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.get(i, j) == 0.0))
    }

    /// Copy with off-diagonals clamped to ±[`MAX_ABS_CORRELATION`].
    pub fn clamped(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            for j in 0..self.dim {
                if i != j {
                    let v = self.get(i, j).clamp(-MAX_ABS_CORRELATION, MAX_ABS_CORRELATION);
                    out.entries[i * self.dim + j] = v;
                }
            }
        }
        out
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim == 0 {
            return 1.0;
        }
        let eig = SymmetricEigen::new(self.to_dmatrix());
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }
}

/// Lower-triangular factor, row-major, `dim × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    pub dim: usize,
    pub entries: Vec<f64>,
}

impl LowerTriangular {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// L · Lᵀ.
    pub fn multiply_back(&self) -> Vec<Vec<f64>> {
        let n = self.dim;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..=i.min(j)).map(|k| self.get(i, k) * self.get(j, k)).sum())
                    .collect()
            })
            .collect()
    }
}

/// Cholesky factorization of a positive definite correlation matrix.
pub fn cholesky_lower(corr: &CorrelationMatrix) -> Result<LowerTriangular> {
    let n = corr.dim();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = corr.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 1e-14 {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(LowerTriangular { dim: n, entries: l })
}

/// Repair a symmetric unit-diagonal matrix into a positive definite
/// correlation matrix by clipping eigenvalues at [`EIGEN_FLOOR`] and
/// rescaling to unit diagonal. Inputs that are already positive definite
/// are returned unchanged.
pub fn nearest_correlation(rows: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(domain("nearest_correlation requires a square matrix"));
    }
    let mut m = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (0.5 * (rows[i][j] + rows[j][i])).clamp(-1.0, 1.0)
        }
    });
    for _ in 0..100 {
        let eig = SymmetricEigen::new(m.clone());
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min >= ACCEPT_EIGEN || n == 0 {
            break;
        }
        let clipped = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
        let rebuilt =
            &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        let scale: Vec<f64> = (0..n).map(|i| 1.0 / rebuilt[(i, i)].sqrt()).collect();
        m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                let v = 0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)]) * (scale[i] * scale[j]);
                v.clamp(-1.0, 1.0)
            }
        });
    }
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            entries.push(m[(i, j)]);
        }
    }
    Ok(CorrelationMatrix { dim: n, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_correlation(n: usize, rng: &mut ChaCha8Rng) -> CorrelationMatrix {
        // Gram matrix of random unit vectors, always PD for n ≤ rank.
        let vecs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..n + 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            1.0
                        } else {
                            vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum()
                        }
                    })
                    .collect()
            })
            .collect();
        CorrelationMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky_lower(&CorrelationMatrix::identity(4)).unwrap();
        assert_eq!(l.entries, CorrelationMatrix::identity(4).entries);
    }

    #[test]
    fn cholesky_two_by_two() {
        let m = CorrelationMatrix::equicorrelated(2, 0.6).unwrap();
        let l = cholesky_lower(&m).unwrap();
        assert_eq!(l.get(0, 0), 1.0);
        assert_eq!(l.get(0, 1), 0.0);
        assert!((l.get(1, 0) - 0.6).abs() < 1e-15);
        assert!((l.get(1, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cholesky_multiply_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_correlation(5, &mut rng);
            let back = cholesky_lower(&m).unwrap().multiply_back();
            for (i, row) in back.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    assert!((v - m.get(i, j)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn cholesky_rejects_non_pd() {
        let rows = vec![vec![1.0, -0.9, -0.9], vec![-0.9, 1.0, -0.9], vec![-0.9, -0.9, 1.0]];
        let m = CorrelationMatrix::from_rows(&rows).unwrap();
        assert!(matches!(cholesky_lower(&m), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn repair_leaves_pd_input_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let m = random_correlation(6, &mut rng);
            let r = nearest_correlation(&m.rows()).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    assert!((r.get(i, j) - m.get(i, j)).abs() < 1e-12);
                }
            }
        }
        let id = nearest_correlation(&CorrelationMatrix::identity(3).rows()).unwrap();
        assert_eq!(id, CorrelationMatrix::identity(3));
    }

    #[test]
    fn repair_fixes_negative_equicorrelation() {
        let rows = vec![vec![1.0, -0.9, -0.9], vec![-0.9, 1.0, -0.9], vec![-0.9, -0.9, 1.0]];
        // Eigenvalues of the input are 1.9, 1.9, -0.8.
        let bad: DMatrix<f64> = DMatrix::from_row_slice(3, 3, &rows.concat());
        let min: f64 = SymmetricEigen::new(bad).eigenvalues.min();
        assert!((min + 0.8).abs() < 1e-12);

        let r = nearest_correlation(&rows).unwrap();
        assert!(r.min_eigenvalue() >= -1e-10);
        for i in 0..3 {
            assert_eq!(r.get(i, i), 1.0);
        }
        assert!(cholesky_lower(&r).is_ok());
        // Idempotent once repaired.
        let again = nearest_correlation(&r.rows()).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn restrict_picks_submatrix() {
        let rows = vec![vec![1.0, 0.1, 0.2], vec![0.1, 1.0, 0.3], vec![0.2, 0.3, 1.0]];
        let m = CorrelationMatrix::from_rows(&rows).unwrap();
        let s = m.restrict(&[2, 0]);
        assert_eq!(s.rows(), vec![vec![1.0, 0.2], vec![0.2, 1.0]]);
    }

    #[test]
    fn from_rows_validates() {
        assert!(CorrelationMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(CorrelationMatrix::from_rows(&[vec![1.0, 0.2], vec![0.3, 1.0]]).is_err());
        assert!(CorrelationMatrix::from_rows(&[vec![0.9]]).is_err());
    }
}
