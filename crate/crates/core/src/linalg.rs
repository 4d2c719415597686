//! Dense fixed-dimension kernels for symmetric positive-definite systems.
//!
//! Everything the bandit engines need reduces to four operations on the
//! information matrix `V = λI + Σ u uᵀ`: solving `V x = b`, its
//! log-determinant (the sync trigger), rank-one accumulation, and the
//! inverse-weighted norm `‖u‖_{V⁻¹}` that scales exploration bonuses.
//! All of them go through one Cholesky factorization; no explicit inverse
//! is ever formed.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot:e} at column {col})")]
    NotPositiveDefinite { col: usize, pivot: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// Dense real vector of the ambient dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    entries: Vec<f64>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: vec![0.0; dim],
        }
    }

    pub fn from_vec(entries: Vec<f64>) -> Self {
        Self { entries }
    }

    /// Standard basis vector `e_i`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.entries[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.entries.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dot of mismatched vectors");
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Vector {
        Vector::from_vec(self.entries.iter().map(|x| x * c).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        assert_eq!(self.dim(), other.dim(), "add of mismatched vectors");
        Vector::from_vec(
            self.entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        assert_eq!(self.dim(), other.dim(), "sub of mismatched vectors");
        Vector::from_vec(
            self.entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// `self += c * other`, in place.
    pub fn add_assign_scaled(&mut self, other: &Vector, c: f64) {
        assert_eq!(self.dim(), other.dim(), "axpy of mismatched vectors");
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            *a += c * b;
        }
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.entries[i]
    }
}

/// Symmetric `d×d` matrix, stored dense row-major.
///
/// All mutating paths write both mirror entries with identical values, so
/// stored asymmetry can only come from a foreign buffer; `cholesky` reads
/// through `(A + Aᵀ)/2` regardless, which also guards long accumulation
/// sums against floating-point drift.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = c;
        }
        m
    }

    /// Builds from a row-major buffer, rejecting non-square lengths.
    /// The caller is responsible for symmetry (checked downstream).
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch {
                left: data.len(),
                right: dim * dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i,j)` and `(j,i)`.
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute difference between mirror entries.
    pub fn max_asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                worst = worst.max((self.data[i * d + j] - self.data[j * d + i]).abs());
            }
        }
        worst
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix, LinalgError> {
        if self.dim != other.dim {
            return Err(LinalgError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        let mut out = self.clone();
        out.add_assign(other).expect("dims already checked");
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &SymMatrix) -> Result<(), LinalgError> {
        if self.dim != other.dim {
            return Err(LinalgError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += u uᵀ`, in place.
    pub fn add_assign_rank_one(&mut self, u: &Vector) -> Result<(), LinalgError> {
        if self.dim != u.dim() {
            return Err(LinalgError::DimensionMismatch {
                left: self.dim,
                right: u.dim(),
            });
        }
        let d = self.dim;
        let us = u.as_slice();
        for i in 0..d {
            let ui = us[i];
            if ui == 0.0 {
                continue;
            }
            let row = &mut self.data[i * d..(i + 1) * d];
            for (j, &uj) in us.iter().enumerate() {
                row[j] += ui * uj;
            }
        }
        Ok(())
    }

    pub fn mul_vec(&self, v: &Vector) -> Result<Vector, LinalgError> {
        if self.dim != v.dim() {
            return Err(LinalgError::DimensionMismatch {
                left: self.dim,
                right: v.dim(),
            });
        }
        let d = self.dim;
        let mut out = vec![0.0; d];
        for i in 0..d {
            let row = &self.data[i * d..(i + 1) * d];
            out[i] = row.iter().zip(v.as_slice()).map(|(a, b)| a * b).sum();
        }
        Ok(Vector::from_vec(out))
    }

    /// Cholesky factorization `A = L Lᵀ` of the symmetrized matrix.
    pub fn cholesky(&self) -> Result<Cholesky, LinalgError> {
        let d = self.dim;
        let mut l = vec![0.0f64; d * d];
        for j in 0..d {
            for i in j..d {
                // read through the symmetrized matrix
                let a_ij = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
                let mut s = a_ij;
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if !s.is_finite() || s <= 0.0 {
                        return Err(LinalgError::NotPositiveDefinite { col: j, pivot: s });
                    }
                    l[j * d + j] = s.sqrt();
                } else {
                    l[i * d + j] = s / l[j * d + j];
                }
            }
        }
        Ok(Cholesky { dim: d, lower: l })
    }
}

/// Lower-triangular Cholesky factor of a positive-definite matrix.
///
/// Factor once per model refresh, then reuse for the solve, the
/// log-determinant, and every per-arm exploration norm of that round.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `A x = b` by forward then backward substitution.
    pub fn solve(&self, b: &Vector) -> Result<Vector, LinalgError> {
        if b.dim() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                left: self.dim,
                right: b.dim(),
            });
        }
        let mut y = self.forward_solve(b.as_slice());
        // backward: Lᵀ x = y
        let d = self.dim;
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in (i + 1)..d {
                s -= self.lower[k * d + i] * y[k];
            }
            y[i] = s / self.lower[i * d + i];
        }
        Ok(Vector::from_vec(y))
    }

    /// `ln det A = 2 Σ ln L_ii`.
    pub fn log_det(&self) -> f64 {
        let d = self.dim;
        2.0 * (0..d).map(|i| self.lower[i * d + i].ln()).sum::<f64>()
    }

    /// `sqrt(uᵀ A⁻¹ u) = ‖L⁻¹ u‖`, via one forward substitution.
    pub fn inv_weighted_norm(&self, u: &Vector) -> Result<f64, LinalgError> {
        if u.dim() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                left: self.dim,
                right: u.dim(),
            });
        }
        let w = self.forward_solve(u.as_slice());
        Ok(w.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut y = b.to_vec();
        for i in 0..d {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lower[i * d + k] * y[k];
            }
            y[i] = s / self.lower[i * d + i];
        }
        y
    }
}

/// Solves `A x = b` for positive-definite `A`.
pub fn solve_psd(a: &SymMatrix, b: &Vector) -> Result<Vector, LinalgError> {
    a.cholesky()?.solve(b)
}

/// Natural log of `det A` for positive-definite `A`.
pub fn log_det(a: &SymMatrix) -> Result<f64, LinalgError> {
    Ok(a.cholesky()?.log_det())
}

/// Returns `A + u uᵀ`.
pub fn rank_one_update(a: &SymMatrix, u: &Vector) -> Result<SymMatrix, LinalgError> {
    let mut out = a.clone();
    out.add_assign_rank_one(u)?;
    Ok(out)
}

/// `‖u‖_{A⁻¹} = sqrt(uᵀ A⁻¹ u)` for positive-definite `A`.
pub fn inv_weighted_norm(a: &SymMatrix, u: &Vector) -> Result<f64, LinalgError> {
    a.cholesky()?.inv_weighted_norm(u)
}
