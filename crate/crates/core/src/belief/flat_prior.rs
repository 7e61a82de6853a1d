use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FlatLocationPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Conditions targets `T = θ·1 + u` on observations `O = θ·1 + v`, where
/// `(u, v)` is zero-mean Gaussian and `θ` has a flat prior on ℝ.
///
/// This is the infinite-prior-variance limit of ordinary Gaussian
/// conditioning: with `w = S⁻¹1`, `q = 1ᵀw`, `θ̂ = wᵀO / q` and
/// `r = 1 − Σ_TO S⁻¹ 1`,
///
/// ```text
/// mean = θ̂·1 + Σ_TO S⁻¹ (O − θ̂·1)
/// cov  = Σ_TT − Σ_TO S⁻¹ Σ_OT + r rᵀ / q
/// ```
pub fn condition_flat_location(
    s_oo: &DMatrix<f64>,
    s_to: &DMatrix<f64>,
    s_tt: &DMatrix<f64>,
    obs: &DVector<f64>,
) -> Result<FlatLocationPosterior> {
    let m = s_oo.nrows();
    let chol = s_oo
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("observation covariance is not positive definite".into()))?;

    let ones_o = DVector::from_element(m, 1.0);
    let ones_t = DVector::from_element(s_to.nrows(), 1.0);
    let w = chol.solve(&ones_o);
    let q = ones_o.dot(&w);
    let location = w.dot(obs) / q;

    // K = Σ_TO S⁻¹
    let gain = chol.solve(&s_to.transpose()).transpose();
    let residual = obs - &ones_o * location;
    let mean = &ones_t * location + &gain * residual;

    let r = &ones_t - &gain * &ones_o;
    let cov = s_tt - &gain * s_to.transpose() + (&r * r.transpose()) / q;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(FlatLocationPosterior { mean, cov })
}
