//! Banach iteration on the fixed-point function `g` and the sufficient
//! conditions under which it is a contraction.

mod integrate;
mod operator;
mod solve;

pub use integrate::{
    default_gh_nodes, Estimate, GaussHermiteTensor, IntegrationScheme, Integrator, IntegratorRegistry, MonteCarlo,
    SchemeSettings, MAX_GH_DIM, MIN_MC_SAMPLES,
};
pub use operator::{apply_t, eval_m, phi, Application, Operator};
pub use solve::{solve, InitialGuess, SolveDiagnostics, SolveOptions};

use serde::{Deserialize, Serialize};

use crate::belief::{compute_coefficients, BeliefCoefficients, GameParams};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Left side of the Lipschitz-preservation condition; compared with `τ`.
    pub lipschitz_bound_lhs: f64,
    /// Contraction coefficient of `T` in the uniform norm.
    pub contraction_factor: f64,
    pub w_n: f64,
    pub tau: f64,
    pub lipschitz_ok: bool,
    pub contraction_ok: bool,
    pub banach_ok: bool,
    /// n = 2 only: `(4a² + 3a − 1) / (a(1 − a))`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n2_reformulated_lhs: Option<f64>,
}

pub fn check_conditions(params: &GameParams) -> Result<ConditionReport> {
    Ok(conditions_from(&compute_coefficients(params)?))
}

pub fn conditions_from(c: &BeliefCoefficients) -> ConditionReport {
    let n = c.n as f64;
    let (a, b, e) = (c.a_n, c.b_n, c.e_n);
    let spread = e * (n * a + (n - 2.0) * b);
    let lipschitz_bound_lhs = (n - 1.0) * (spread * (b + 2.0 * a) + b * b) / (a * b * b);
    let contraction_num = (n - 1.0) * (spread + b) / (b * b);
    let tau = c.tau();
    let contraction_factor = contraction_num / tau;
    ConditionReport {
        lipschitz_bound_lhs,
        contraction_factor,
        w_n: c.w_n,
        tau,
        lipschitz_ok: lipschitz_bound_lhs <= tau,
        contraction_ok: contraction_factor < 1.0,
        banach_ok: c.w_n < tau,
        n2_reformulated_lhs: (c.n == 2).then(|| (4.0 * a * a + 3.0 * a - 1.0) / (a * (1.0 - a))),
    }
}

/// Factor by which both standard deviations must grow (at fixed `τ/σ`) for
/// `w_n < τ` to hold with relative room `margin`. `w_n` is scale invariant,
/// so this is `w_n (1 + margin) / τ`.
pub fn sufficient_noise_scale(params: &GameParams, margin: f64) -> Result<f64> {
    let c = compute_coefficients(params)?;
    Ok(c.w_n * (1.0 + margin) / params.tau())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_instance_violates_sufficient_condition() {
        let report = check_conditions(&GameParams::new(2, 1.0, 9.0).unwrap()).unwrap();
        let a = 10.0 / 11.0;
        let reformulated = (4.0 * a * a + 3.0 * a - 1.0) / (a * (1.0 - a));
        assert!((report.n2_reformulated_lhs.unwrap() - reformulated).abs() < 1e-12);
        assert!((reformulated - 60.9).abs() < 1e-9);
        assert!((report.lipschitz_bound_lhs - 379.1).abs() < 1e-9);
        assert!((report.contraction_factor - 191.0 / 3.0).abs() < 1e-9);
        assert_eq!(report.tau, 3.0);
        assert!(!report.banach_ok && !report.lipschitz_ok && !report.contraction_ok);
    }

    #[test]
    fn w_n_is_scale_invariant() {
        for n in 2..=5 {
            let base = GameParams::new(n, 1.0, 9.0).unwrap();
            let w = check_conditions(&base).unwrap().w_n;
            for c in [2.0, 10.0, 100.0] {
                let scaled = check_conditions(&base.scaled(c).unwrap()).unwrap().w_n;
                assert!(((scaled - w) / w).abs() < 1e-10, "n={n} c={c}");
            }
        }
    }

    #[test]
    fn threshold_semantics_around_w_n() {
        let base = GameParams::new(3, 1.0, 9.0).unwrap();
        let scale = sufficient_noise_scale(&base, 0.0).unwrap();
        let above = check_conditions(&base.scaled(scale * (1.0 + 1e-9)).unwrap()).unwrap();
        let below = check_conditions(&base.scaled(scale * (1.0 - 1e-9)).unwrap()).unwrap();
        assert!(above.banach_ok && above.lipschitz_ok && above.contraction_ok);
        assert!(!below.banach_ok);
        assert!(check_conditions(&base).unwrap().n2_reformulated_lhs.is_none());
    }
}
