//! Test of a standardized regression coefficient `δ = γ/σ` in
//! `Y = γX + Zβ + σε`, invariant under `y ↦ cy + Zv` (`c > 0`).
//!
//! The maximal invariant is the residual direction `U = A′y/‖A′y‖` where the
//! columns of `A` span the orthogonal complement of `col(Z)`. Conditionally on
//! the design, `A′y/σ ~ N(δA′x, I_k)` with `k = n − d`, so `U` has density
//! `Γ(k/2)/(2π^{k/2}) · e^{−δ²‖A′x‖²/2} · E[e^{aR}]` on the unit sphere, with
//! `a = δ x′Au` and `R ~ χ_k`.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::specfun::{ln_chi_mgf, ln_gamma};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    x_vec: DVector<f64>,
    z_mat: DMatrix<f64>,
    y_vec: DVector<f64>,
}

impl RegressionData {
    pub fn new(y_vec: DVector<f64>, x_vec: DVector<f64>, z_mat: DMatrix<f64>) -> Result<Self> {
        let n = y_vec.len();
        if x_vec.len() != n || z_mat.nrows() != n {
            return Err(Error::domain("regression", "y, x and z must have the same number of rows"));
        }
        if n < z_mat.ncols() + 2 {
            return Err(Error::DegenerateSample(format!(
                "need n >= d + 2 = {} observations, got {n}",
                z_mat.ncols() + 2
            )));
        }
        if y_vec.iter().chain(x_vec.iter()).chain(z_mat.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("regression", "data must be finite"));
        }
        Ok(RegressionData { x_vec, z_mat, y_vec })
    }

    pub fn n(&self) -> usize {
        self.y_vec.len()
    }

    pub fn d(&self) -> usize {
        self.z_mat.ncols()
    }

    pub fn x_vec(&self) -> &DVector<f64> {
        &self.x_vec
    }

    pub fn z_mat(&self) -> &DMatrix<f64> {
        &self.z_mat
    }

    pub fn y_vec(&self) -> &DVector<f64> {
        &self.y_vec
    }

    /// Same design with a new response.
    pub fn with_response(&self, y_vec: DVector<f64>) -> Result<Self> {
        RegressionData::new(y_vec, self.x_vec.clone(), self.z_mat.clone())
    }
}

/// `n × (n − d)` matrix with orthonormal columns spanning `col(Z)^⊥`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBasis {
    pub a_mat: DMatrix<f64>,
}

/// Orthonormal basis of the orthocomplement from the full QR factorization of
/// `[Z | I]`; each column is signed so its first nonzero entry is positive.
pub fn residual_basis(z_mat: &DMatrix<f64>) -> Result<ResidualBasis> {
    let (n, d) = z_mat.shape();
    if d >= n {
        return Err(Error::RankDeficient { column: n });
    }
    let mut aug = DMatrix::zeros(n, d + n);
    aug.view_mut((0, 0), (n, d)).copy_from(z_mat);
    aug.view_mut((0, d), (n, n)).fill_with_identity();
    let qr = aug.qr();
    let r = qr.r();
    let scale = z_mat.norm().max(f64::MIN_POSITIVE);
    for j in 0..d {
        if !(r[(j, j)].abs() > 1e-10 * scale) {
            return Err(Error::RankDeficient { column: j });
        }
    }
    let q = qr.q();
    let mut a = q.columns(d, n - d).into_owned();
    for mut col in a.column_iter_mut() {
        if let Some(&first) = col.iter().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    Ok(ResidualBasis { a_mat: a })
}

/// `A′y / ‖A′y‖`.
pub fn u_statistic(data: &RegressionData, basis: &ResidualBasis) -> Result<DVector<f64>> {
    let r = basis.a_mat.tr_mul(&data.y_vec);
    let norm = r.norm();
    let scale = data.y_vec.norm();
    if !(norm > 1e-13 * scale) {
        return Err(Error::ZeroResidual);
    }
    Ok(r / norm)
}

/// Log density of the direction of `N(δ·ax, I_k)` on the unit sphere `S^{k−1}`.
pub fn direction_log_density(u: &DVector<f64>, delta: f64, ax: &DVector<f64>) -> Result<f64> {
    let k = u.len();
    if ax.len() != k || k == 0 {
        return Err(Error::domain("u_log_density", "u and A'x must have the same positive length"));
    }
    if (u.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::domain("u_log_density", format!("u is not a unit vector (norm {})", u.norm())));
    }
    let kf = k as f64;
    let ln_uniform = ln_gamma(kf / 2.0)? - LN_2 - (kf / 2.0) * PI.ln();
    if delta == 0.0 {
        return Ok(ln_uniform);
    }
    let a = delta * ax.dot(u);
    let c = -0.5 * delta * delta * ax.norm_squared();
    Ok(ln_uniform + c + ln_chi_mgf(k, a)?)
}

/// Log density of `U` at `u` under effect size `delta`, conditional on the design.
pub fn u_log_density(u: &DVector<f64>, delta: f64, data: &RegressionData, basis: &ResidualBasis) -> Result<f64> {
    direction_log_density(u, delta, &basis.a_mat.tr_mul(&data.x_vec))
}

pub fn log_evalue_regression(data: &RegressionData, delta0: f64, delta1: f64) -> Result<f64> {
    if !delta0.is_finite() || !delta1.is_finite() {
        return Err(Error::domain("evalue_regression", "effect sizes must be finite"));
    }
    let basis = residual_basis(&data.z_mat)?;
    log_evalue_with_basis(data, &basis, delta0, delta1)
}

/// As `log_evalue_regression` with a precomputed basis for `data.z_mat()`.
pub fn log_evalue_with_basis(data: &RegressionData, basis: &ResidualBasis, delta0: f64, delta1: f64) -> Result<f64> {
    let u = u_statistic(data, basis)?;
    if delta0 == delta1 {
        return Ok(0.0);
    }
    let ax = basis.a_mat.tr_mul(&data.x_vec);
    Ok(direction_log_density(&u, delta1, &ax)? - direction_log_density(&u, delta0, &ax)?)
}

/// Ratio of the residual-direction densities under `δ₁` and `δ₀`.
pub fn evalue_regression(data: &RegressionData, delta0: f64, delta1: f64) -> Result<f64> {
    log_evalue_regression(data, delta0, delta1).map(f64::exp)
}

/// Response `y = δσx + Zβ + σε` for a fixed design.
pub fn sample_response<R: Rng + ?Sized>(
    x_vec: &DVector<f64>,
    z_mat: &DMatrix<f64>,
    delta: f64,
    beta: &DVector<f64>,
    sigma: f64,
    rng: &mut R,
) -> DVector<f64> {
    let eps = DVector::from_fn(x_vec.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    x_vec * (delta * sigma) + z_mat * beta + eps * sigma
}

/// Uniform draw from the unit sphere in `ℝ^k`.
pub fn sample_sphere<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}
