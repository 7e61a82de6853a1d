//! The operator `T g(y) = 1 + Σ_l E_ε[Φ(M_{ε,l} g(y))]`.
//!
//! At a node `y = (x_i, {y_ji}_{j≠k})` the missing slot `k = 0` is rebuilt
//! from `g` itself, the conditional means of every peer's signals follow, and
//! for each peer `l` the probability that `l` plays risky is integrated over
//! the peer-block noise `ε`. The relay noise `ε_il` enters only through `Φ`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::integrate::{IntegrationScheme, Integrator};
use crate::belief::BeliefCoefficients;
use crate::error::{invalid, Error, Result};
use crate::grid::GridFunction;

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Conditional means of the peers' own signals at one node.
struct NodeMeans {
    x: f64,
    means: Vec<f64>,
}

fn node_means(g: &GridFunction, coeffs: &BeliefCoefficients, y_reduced: &[f64]) -> NodeMeans {
    let (a, b) = (coeffs.a_n, coeffs.b_n);
    let x = y_reduced[0];
    let others = &y_reduced[1..];
    let rest: f64 = others.iter().sum();
    let y_k = g.interpolate(y_reduced) / b - (a / b) * x - rest;
    let z = y_k + rest;
    let own = coeffs.c_n * coeffs.a_prev * x;
    let mean = |y_ji: f64| own + coeffs.d_n * y_ji + coeffs.c_n * coeffs.b_prev * (z - y_ji);
    let means = std::iter::once(y_k).chain(others.iter().copied()).map(mean).collect();
    NodeMeans { x, means }
}

/// `M_{ε,l}` given precomputed means; `arg` is scratch of length `n − 1`.
fn m_value(
    g: &GridFunction,
    coeffs: &BeliefCoefficients,
    tau: f64,
    node: &NodeMeans,
    l: usize,
    eps: &[f64],
    arg: &mut [f64],
) -> f64 {
    arg[0] = node.means[l] + eps[0];
    let mut m = 1;
    for (j, &mean) in node.means.iter().enumerate() {
        if j != l {
            arg[m] = mean + eps[m];
            m += 1;
        }
    }
    let shares: f64 = arg[1..].iter().sum();
    let (a, b) = (coeffs.a_n, coeffs.b_n);
    (g.interpolate(arg) - a * arg[0] - b * shares - b * node.x) / (b * tau)
}

/// `M_{ε,l} g(y)` at a reduced point `y` for peer slot `l`, where
/// `eps = (ε_l, {ε_jl}_{j ∉ {i,l}})` in slot order.
pub fn eval_m(g: &GridFunction, coeffs: &BeliefCoefficients, y_reduced: &[f64], l: usize, eps: &[f64]) -> Result<f64> {
    let dim = coeffs.n - 1;
    if g.dim() != dim || y_reduced.len() != dim || eps.len() != dim {
        return invalid(format!("eval_m expects {dim}-dimensional g, point and noise"));
    }
    if l >= dim {
        return invalid(format!("peer slot {l} out of range 0..{dim}"));
    }
    if y_reduced.iter().chain(eps).any(|v| !v.is_finite()) {
        return invalid("eval_m inputs must be finite");
    }
    let node = node_means(g, coeffs, y_reduced);
    let mut arg = vec![0.0; dim];
    Ok(m_value(g, coeffs, coeffs.tau(), &node, l, eps, &mut arg))
}

/// Result of one application of `T`.
#[derive(Debug, Clone)]
pub struct Application {
    pub g: GridFunction,
    /// Largest per-node standard error (zero for deterministic rules).
    pub max_stderr: f64,
}

/// `T` bound to a coefficient set and an integration backend.
pub struct Operator {
    coeffs: BeliefCoefficients,
    chol: DMatrix<f64>,
    integrator: Box<dyn Integrator>,
}

impl Operator {
    pub fn new(coeffs: &BeliefCoefficients, scheme: &IntegrationScheme) -> Result<Self> {
        let dim = coeffs.n - 1;
        Self::with_integrator(coeffs, scheme.build(dim)?)
    }

    pub fn with_integrator(coeffs: &BeliefCoefficients, integrator: Box<dyn Integrator>) -> Result<Self> {
        let dim = coeffs.n - 1;
        if integrator.dim() != dim {
            return invalid(format!("integrator has dimension {}, expected {dim}", integrator.dim()));
        }
        let cov = coeffs.eps_covariance()?;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| {
                Error::NumericalFailure(format!(
                    "peer-noise covariance is not positive definite (diagonal {:?})",
                    cov.diagonal().as_slice()
                ))
            })?
            .l();
        Ok(Self { coeffs: coeffs.clone(), chol, integrator })
    }

    pub fn coeffs(&self) -> &BeliefCoefficients {
        &self.coeffs
    }

    pub fn integrator_name(&self) -> &'static str {
        self.integrator.name()
    }

    /// `(T g)(y)` before clamping, with its standard error. `stream` keys the
    /// random substream of stochastic backends.
    pub fn eval_node(&self, g: &GridFunction, y_reduced: &[f64], stream: u64) -> (f64, f64) {
        let dim = self.coeffs.n - 1;
        let tau = self.coeffs.tau();
        let node = node_means(g, &self.coeffs, y_reduced);
        let mut eps = vec![0.0; dim];
        let mut arg = vec![0.0; dim];
        let estimate = self.integrator.expectation(stream, &mut |z| {
            for (r, e) in eps.iter_mut().enumerate() {
                *e = (0..=r).map(|c| self.chol[(r, c)] * z[c]).sum();
            }
            (0..dim).map(|l| phi(m_value(g, &self.coeffs, tau, &node, l, &eps, &mut arg))).sum()
        });
        (1.0 + estimate.value, estimate.stderr)
    }

    pub fn apply(&self, g: &GridFunction) -> Result<Application> {
        if g.dim() != self.coeffs.n - 1 {
            return invalid(format!("g has {} axes, expected {}", g.dim(), self.coeffs.n - 1));
        }
        let spec = g.spec();
        let upper = self.coeffs.n as f64;
        let results: Vec<(f64, f64)> = (0..spec.node_count())
            .into_par_iter()
            .map(|flat| {
                let (value, stderr) = self.eval_node(g, &spec.node(flat), flat as u64);
                (value.clamp(1.0, upper), stderr)
            })
            .collect();
        if let Some(flat) = results.iter().position(|(v, _)| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!("T g is not finite at node {flat}")));
        }
        let max_stderr = results.iter().map(|r| r.1).fold(0.0, f64::max);
        let values = results.into_iter().map(|r| r.0).collect();
        Ok(Application { g: g.with_values(values)?.symmetrize()?, max_stderr })
    }
}

/// One application of `T` (clamped to `[1, n]` and re-symmetrized).
pub fn apply_t(g: &GridFunction, coeffs: &BeliefCoefficients, scheme: &IntegrationScheme) -> Result<GridFunction> {
    Ok(Operator::new(coeffs, scheme)?.apply(g)?.g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{compute_coefficients, peer_conditional_law, GameParams, ObservationVector};
    use crate::grid::GridSpec;
    use crate::threshold::ThresholdFunction;

    fn coeffs(n: usize, s2: f64, t2: f64) -> BeliefCoefficients {
        compute_coefficients(&GameParams::new(n, s2, t2).unwrap()).unwrap()
    }

    fn gh(nodes: usize) -> IntegrationScheme {
        IntegrationScheme::GaussHermiteTensor { nodes_per_dim: nodes }
    }

    #[test]
    fn phi_reference_values() {
        assert_eq!(phi(0.0), 0.5);
        assert!((phi(1.959963984540054) - 0.975).abs() < 1e-15);
        assert!(phi(-40.0) >= 0.0 && phi(40.0) <= 1.0);
    }

    #[test]
    fn constant_g_at_origin_by_hand() {
        let c = coeffs(2, 1.0, 9.0);
        let value = 1.5;
        let g = GridFunction::constant(GridSpec::uniform(1, -30.0, 40.0, 33).unwrap(), value, c.a_n, 2).unwrap();
        // y_k = value / b, x̄ = d·y_k, M = (value − a x̄) / (b τ)
        let y_k = value / c.b_n;
        let x_bar = c.d_n * y_k;
        let expected = (value - c.a_n * x_bar) / (c.b_n * 3.0);
        let m = eval_m(&g, &c, &[0.0], 0, &[0.0]).unwrap();
        assert!((m - expected).abs() < 1e-12);
    }

    #[test]
    fn shifting_eps_with_constant_g() {
        let c = coeffs(3, 1.0, 2.0);
        let g = GridFunction::constant(GridSpec::uniform(2, -50.0, 50.0, 9).unwrap(), 2.2, c.a_n, 3).unwrap();
        let y = [0.4, -1.3];
        let base = eval_m(&g, &c, &y, 1, &[0.1, -0.2]).unwrap();
        let shifted = eval_m(&g, &c, &y, 1, &[0.1 + 0.75, -0.2]).unwrap();
        let slope = -c.a_n * 0.75 / (c.b_n * c.tau());
        assert!((shifted - base - slope).abs() < 1e-12);
    }

    /// The peer's risk probability written through the public threshold API:
    /// `P(y_il ≤ Ih_l) = Φ((Ih_l(x_l, {y_jl}) − x_i) / τ)`.
    #[test]
    fn m_matches_threshold_route() {
        for n in 2..=4 {
            let c = coeffs(n, 1.7, 2.3);
            let spec = GridSpec::uniform(n - 1, -6.0, 8.0, 9).unwrap();
            let g = GridFunction::from_fn(spec, c.a_n, n, |p| {
                let s: f64 = p.iter().sum();
                1.0 + (n as f64 - 1.0) / (1.0 + (0.2 * s).exp())
            })
            .unwrap();
            let tf = ThresholdFunction::new(g.clone(), c.clone()).unwrap();
            let y_reduced: Vec<f64> = (0..n - 1).map(|d| 0.7 - 0.9 * d as f64).collect();
            let eps: Vec<f64> = (0..n - 1).map(|d| 0.3 * d as f64 - 0.2).collect();

            let ih_i = tf.g_to_ih(&y_reduced).unwrap();
            let full = ObservationVector::new(
                y_reduced[0],
                std::iter::once(ih_i).chain(y_reduced[1..].iter().copied()).collect(),
            )
            .unwrap();
            for l in 0..n - 1 {
                let law = peer_conditional_law(&c, &full, l).unwrap();
                let peer: Vec<f64> = law.block_mean().iter().zip(&eps).map(|(m, e)| m + e).collect();
                let expected = (tf.g_to_ih(&peer).unwrap() - full.x()) / c.tau();
                let m = eval_m(&g, &c, &y_reduced, l, &eps).unwrap();
                assert!((m - expected).abs() < 1e-10, "n={n} l={l}: {m} vs {expected}");
            }
        }
    }

    #[test]
    fn eval_m_rejects_bad_shapes() {
        let c = coeffs(3, 1.0, 1.0);
        let g = GridFunction::constant(GridSpec::uniform(2, -5.0, 5.0, 3).unwrap(), 2.0, c.a_n, 3).unwrap();
        assert!(eval_m(&g, &c, &[0.0], 0, &[0.0, 0.0]).is_err());
        assert!(eval_m(&g, &c, &[0.0, 0.0], 2, &[0.0, 0.0]).is_err());
        assert!(eval_m(&g, &c, &[f64::NAN, 0.0], 0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn output_is_bounded_and_symmetric() {
        let c = coeffs(4, 1.0, 2.0);
        let spec = GridSpec::uniform(3, -10.0, 14.0, 7).unwrap();
        let g =
            GridFunction::from_fn(spec, c.a_n, 4, |p| 1.0 + 3.0 / (1.0 + (0.1 * (p[0] + 0.5 * p[2])).exp())).unwrap();
        let out = apply_t(&g, &c, &gh(6)).unwrap();
        assert!(out.values().iter().all(|v| (1.0..=4.0).contains(v)));
        assert_eq!(out.symmetrize().unwrap(), out);
    }

    /// With `g` constant, `M` is affine in `ε` and `E Φ(α + βε) = Φ(α / √(1 + β²γ²))`.
    #[test]
    fn constant_g_node_against_closed_form_and_monte_carlo() {
        let c = coeffs(2, 1.0, 9.0);
        let value = 1.5;
        let g = GridFunction::constant(GridSpec::uniform(1, -30.0, 40.0, 257).unwrap(), value, c.a_n, 2).unwrap();
        let x_bar = c.d_n * value / c.b_n;
        let alpha = (value - c.a_n * x_bar) / (c.b_n * c.tau());
        let beta = -c.a_n / (c.b_n * c.tau());
        let exact = 1.0 + phi(alpha / (1.0 + beta * beta * c.gamma2_n).sqrt());

        let fine = Operator::new(&c, &gh(128)).unwrap().eval_node(&g, &[0.0], 0).0;
        assert!((fine - exact).abs() < 1e-6, "{fine} vs {exact}");
        // the integrand is steep here (a/b = 10), so the default order is only good to ~1e-3
        let default = Operator::new(&c, &gh(32)).unwrap().eval_node(&g, &[0.0], 0).0;
        assert!((default - exact).abs() < 2e-3);

        let mc = Operator::new(&c, &IntegrationScheme::MonteCarlo { sample_count: 1_000_000, seed: 11 }).unwrap();
        let (value, stderr) = mc.eval_node(&g, &[0.0], 0);
        assert!((value - exact).abs() <= 3.0 * stderr, "{exact} vs {value} ± {stderr}");
    }

    #[test]
    fn gh_is_bit_reproducible() {
        let c = coeffs(3, 1.0, 3.0);
        let spec = GridSpec::uniform(2, -8.0, 10.0, 9).unwrap();
        let g = GridFunction::constant(spec, 2.0, c.a_n, 3).unwrap();
        let first = apply_t(&g, &c, &gh(10)).unwrap();
        let second = apply_t(&g, &c, &gh(10)).unwrap();
        assert_eq!(first, second);
    }
}
