//! Quadratic-form penalties `f·𝒢 + φ_t g·𝒢_w + φ_z h·𝒢_s` on tensor
//! coefficients and their Cholesky factors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::linalg::cholesky_lower;

/// Kronecker components for a (lag, position) basis pair, in the column
/// order `l * dim_t + j`:
/// `gram = G_s ⊗ G_w`, `lag_rough = G_s ⊗ D_w`, `pos_rough = D_s ⊗ G_w`.
#[derive(Debug, Clone)]
pub struct PenaltyParts {
    pub gram: DMatrix<f64>,
    pub lag_rough: DMatrix<f64>,
    pub pos_rough: DMatrix<f64>,
}

impl PenaltyParts {
    pub fn new(t_basis: &BasisSet, z_basis: &BasisSet) -> Self {
        PenaltyParts {
            gram: z_basis.gram().kronecker(t_basis.gram()),
            lag_rough: z_basis.gram().kronecker(t_basis.d2gram()),
            pos_rough: z_basis.d2gram().kronecker(t_basis.gram()),
        }
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    /// `a·gram + b·lag_rough + c·pos_rough`.
    pub fn combine(&self, a: f64, b: f64, c: f64) -> DMatrix<f64> {
        let mut m = &self.gram * a;
        if b != 0.0 {
            m += &self.lag_rough * b;
        }
        if c != 0.0 {
            m += &self.pos_rough * c;
        }
        m
    }
}

/// Adaptive per-sensor multipliers of the three penalty components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub f: f64,
    pub g: f64,
    pub h: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        PenaltyWeights { f: 1.0, g: 1.0, h: 1.0 }
    }
}

/// Symmetric positive definite penalty with its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct PenaltyMatrix {
    matrix: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::mismatch("penalty must be square"));
        }
        let chol = cholesky_lower(&matrix)
            .ok_or_else(|| Error::PenaltyNotSpd(format!("{0}x{0} factorization failed", matrix.nrows())))?;
        Ok(PenaltyMatrix { matrix, chol })
    }

    pub fn identity(dim: usize) -> Self {
        PenaltyMatrix {
            matrix: DMatrix::identity(dim, dim),
            chol: DMatrix::identity(dim, dim),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `𝖦 = f·𝒢 + φ_t g·𝒢_w + φ_z h·𝒢_s`.
pub fn build_penalty(
    parts: &PenaltyParts,
    weights: PenaltyWeights,
    phi_t: f64,
    phi_z: f64,
) -> Result<PenaltyMatrix> {
    let PenaltyWeights { f, g, h } = weights;
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::invalid(format!("penalty weight f = {f} must be positive")));
    }
    if [g, h, phi_t, phi_z].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid("penalty weights and smoothing parameters must be non-negative"));
    }
    PenaltyMatrix::new(parts.combine(f, phi_t * g, phi_z * h))
}

/// Quadratic form minimized over coordinates whose design columns are
/// identically zero. For `β = (β_K, β_D)` with zero columns on `D`,
/// `min_{β_D} βᵀGβ = β_Kᵀ S β_K` with the Schur complement
/// `S = G_KK − G_KD G_DD⁻¹ G_DK`, attained at `β_D = −G_DD⁻¹ G_DK β_K`.
#[derive(Debug, Clone)]
pub struct Condensation {
    pub reduced: DMatrix<f64>,
    kept: Vec<usize>,
    dropped: Vec<usize>,
    completion: DMatrix<f64>,
    full_dim: usize,
}

impl Condensation {
    pub fn new(full: &DMatrix<f64>, kept: &[usize]) -> Result<Self> {
        let n = full.nrows();
        let mut is_kept = vec![false; n];
        for &k in kept {
            if k >= n {
                return Err(Error::mismatch(format!("kept index {k} out of range {n}")));
            }
            is_kept[k] = true;
        }
        let dropped: Vec<usize> = (0..n).filter(|&i| !is_kept[i]).collect();
        let gkk = full.select_rows(kept).select_columns(kept);
        if dropped.is_empty() {
            return Ok(Condensation {
                reduced: gkk,
                kept: kept.to_vec(),
                dropped,
                completion: DMatrix::zeros(0, kept.len()),
                full_dim: n,
            });
        }
        let gdd = full.select_rows(&dropped).select_columns(&dropped);
        let gdk = full.select_rows(&dropped).select_columns(kept);
        let completion = match nalgebra::Cholesky::new(gdd.clone()) {
            Some(chol) => -chol.solve(&gdk),
            None => -semidefinite_solve(gdd, &gdk)?,
        };
        let schur = gkk + gdk.transpose() * &completion;
        // restore exact symmetry lost to rounding
        let reduced = (&schur + schur.transpose()) * 0.5;
        Ok(Condensation {
            reduced,
            kept: kept.to_vec(),
            dropped,
            completion,
            full_dim: n,
        })
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    /// Full coefficient vector from the kept coordinates.
    pub fn expand(&self, beta_kept: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.full_dim];
        for (&k, &v) in self.kept.iter().zip(beta_kept) {
            full[k] = v;
        }
        if !self.dropped.is_empty() {
            let b = nalgebra::DVector::from_column_slice(beta_kept);
            let d = &self.completion * b;
            for (&k, &v) in self.dropped.iter().zip(d.iter()) {
                full[k] = v;
            }
        }
        full
    }
}

/// Minimum-norm solution of `A X = B` for symmetric positive semidefinite
/// `A`, via the pseudo-inverse. A semidefinite penalty (no ridge term) still
/// has a well-defined minimum over the dropped coordinates.
fn semidefinite_solve(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::new(a);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = top * n as f64 * f64::EPSILON * 16.0;
    if eig.eigenvalues.iter().any(|&v| v < -tol) {
        return Err(Error::PenaltyNotSpd("dropped block is indefinite".into()));
    }
    let v = &eig.eigenvectors;
    let mut coef = v.transpose() * b;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let scale = if l > tol { 1.0 / l } else { 0.0 };
        coef.row_mut(i).scale_mut(scale);
    }
    Ok(v * coef)
}
