use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::integrate::IntegrationScheme;
use super::operator::Operator;
use super::{conditions_from, ConditionReport};
use crate::belief::{compute_coefficients, GameParams};
use crate::error::{invalid, Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::threshold::ThresholdFunction;

/// Consecutive increases of the sup-norm delta treated as divergence when the
/// sufficient condition does not hold.
const DIVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    /// The codomain midpoint `(n + 1) / 2`.
    Midpoint,
    Constant(f64),
    Function(GridFunction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub scheme: IntegrationScheme,
    /// Defaults to [`GridSpec::default_for`].
    pub grid: Option<GridSpec>,
    pub initial: InitialGuess,
    pub tol: f64,
    pub max_iter: usize,
}

impl SolveOptions {
    pub fn new(scheme: IntegrationScheme) -> Self {
        Self { scheme, grid: None, initial: InitialGuess::Midpoint, tol: 1e-6, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub sup_deltas: Vec<f64>,
    pub converged: bool,
    pub tol: f64,
    pub condition: ConditionReport,
    /// Set when iterating outside the sufficient condition.
    pub banach_warning: bool,
    pub final_lipschitz_ratio: f64,
    /// Worst discrete Lipschitz ratio over all iterates.
    pub max_lipschitz_ratio: f64,
    /// Sup-norm gap between `T` at the working rule and at a coarser one (or
    /// the largest Monte-Carlo standard error), at the final iterate.
    pub quadrature_error_estimate: f64,
    pub scheme: IntegrationScheme,
    pub grid: GridSpec,
    /// Kept out of serialized output so that artifacts are reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Iterates `g ← T g` from the initial guess until the sup-norm step is at
/// most `tol` or `max_iter` steps have run.
///
/// `observer` sees every iterate, starting with the initial guess at index 0.
pub fn solve(
    params: &GameParams,
    options: &SolveOptions,
    observer: &mut dyn FnMut(usize, &GridFunction) -> Result<()>,
) -> Result<(ThresholdFunction, SolveDiagnostics)> {
    let started = Instant::now();
    let coeffs = compute_coefficients(params)?;
    if options.tol.is_nan() || options.tol <= 0.0 {
        return invalid(format!("tol must be positive (got {})", options.tol));
    }
    let n = params.n;
    let grid = match &options.grid {
        Some(spec) => spec.clone(),
        None => GridSpec::default_for(params, &coeffs)?,
    };
    if grid.dim() != n - 1 {
        return invalid(format!("grid has {} axes, n = {n} needs {}", grid.dim(), n - 1));
    }
    let mut g = match &options.initial {
        InitialGuess::Midpoint => GridFunction::constant(grid.clone(), (n as f64 + 1.0) / 2.0, coeffs.a_n, n)?,
        InitialGuess::Constant(v) => GridFunction::constant(grid.clone(), *v, coeffs.a_n, n)?,
        InitialGuess::Function(g0) => {
            if g0.spec() != &grid {
                return invalid("initial function grid differs from the solve grid");
            }
            g0.clone()
        }
    };

    let operator = Operator::new(&coeffs, &options.scheme)?;
    let condition = conditions_from(&coeffs);
    let mut diag = SolveDiagnostics {
        iterations: 0,
        sup_deltas: Vec::new(),
        converged: false,
        tol: options.tol,
        banach_warning: !condition.banach_ok,
        condition,
        final_lipschitz_ratio: 0.0,
        max_lipschitz_ratio: g.check_lipschitz().worst_ratio,
        quadrature_error_estimate: 0.0,
        scheme: options.scheme.clone(),
        grid,
        wall_time: 0.0,
    };
    observer(0, &g)?;

    if options.tol.is_infinite() {
        diag.converged = true;
    }
    let mut increases = 0;
    while !diag.converged && diag.iterations < options.max_iter {
        let next = operator.apply(&g)?.g;
        let delta = next.sup_distance(&g);
        if diag.sup_deltas.last().is_some_and(|&prev| delta > prev) {
            increases += 1;
        } else {
            increases = 0;
        }
        diag.sup_deltas.push(delta);
        diag.iterations += 1;
        diag.max_lipschitz_ratio = diag.max_lipschitz_ratio.max(next.check_lipschitz().worst_ratio);
        g = next;
        observer(diag.iterations, &g)?;
        diag.converged = delta <= options.tol;
        if !diag.condition.banach_ok && increases >= DIVERGENCE_WINDOW {
            diag.final_lipschitz_ratio = g.check_lipschitz().worst_ratio;
            diag.wall_time = started.elapsed().as_secs_f64();
            return Err(Error::Divergence(Box::new(diag)));
        }
    }

    diag.final_lipschitz_ratio = g.check_lipschitz().worst_ratio;
    diag.quadrature_error_estimate = match options.scheme.coarser() {
        Some(coarse) => {
            let fine = operator.apply(&g)?.g;
            Operator::new(&coeffs, &coarse)?.apply(&g)?.g.sup_distance(&fine)
        }
        None => operator.apply(&g)?.max_stderr,
    };
    diag.wall_time = started.elapsed().as_secs_f64();
    Ok((ThresholdFunction::new(g, coeffs)?, diag))
}
