//! Strategies an agent can follow, behind a common [`Policy`] trait.
//!
//! Observations passed to a policy are flat `[x, shared...]` slices in the
//! acting agent's own frame: shared slot `s` holds the signal relayed from
//! the `s`-th other agent in ascending agent order.

use serde::{Deserialize, Serialize};

use crate::belief::BeliefCoefficients;
use crate::error::{invalid, Result};
use crate::threshold::ThresholdFunction;

pub trait Policy: Send + Sync {
    fn name(&self) -> &'static str;

    fn n(&self) -> usize;

    /// Signed distance to the decision boundary; the agent plays risky iff
    /// the margin is `≥ 0`.
    fn margin(&self, agent: usize, y: &[f64]) -> f64;

    fn is_risky(&self, agent: usize, y: &[f64]) -> bool {
        self.margin(agent, y) >= 0.0
    }
}

/// Risky iff the posterior mean `a_n x + b_n z` is at most the agent's threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearThreshold {
    t: Vec<f64>,
    a_n: f64,
    b_n: f64,
}

impl LinearThreshold {
    pub fn new(t: Vec<f64>, coeffs: &BeliefCoefficients) -> Result<Self> {
        if t.len() != coeffs.n {
            return invalid(format!("need exactly {} thresholds (got {})", coeffs.n, t.len()));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return invalid("thresholds must be finite");
        }
        Ok(Self { t, a_n: coeffs.a_n, b_n: coeffs.b_n })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.t
    }
}

impl Policy for LinearThreshold {
    fn name(&self) -> &'static str {
        "linear-threshold"
    }

    fn n(&self) -> usize {
        self.t.len()
    }

    fn margin(&self, agent: usize, y: &[f64]) -> f64 {
        let z: f64 = y[1..].iter().sum();
        self.t[agent] - (self.a_n * y[0] + self.b_n * z)
    }
}

/// Risky iff `h(y) ≥ 0`, with `h` shared by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPolicy {
    tf: ThresholdFunction,
}

impl ThresholdPolicy {
    pub fn new(tf: ThresholdFunction) -> Self {
        Self { tf }
    }

    pub fn function(&self) -> &ThresholdFunction {
        &self.tf
    }
}

impl Policy for ThresholdPolicy {
    fn name(&self) -> &'static str {
        "threshold-function"
    }

    fn n(&self) -> usize {
        self.tf.n()
    }

    fn margin(&self, _agent: usize, y: &[f64]) -> f64 {
        let mut reduced = [0.0; crate::grid::MAX_GRID_DIM];
        let reduced = &mut reduced[..y.len() - 1];
        reduced[0] = y[0];
        reduced[1..].copy_from_slice(&y[2..]);
        self.tf.ih_unchecked(reduced) - y[1]
    }
}

/// Serializable description of a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[allow(clippy::large_enum_variant)]
pub enum Strategy {
    LinearThreshold { t: Vec<f64> },
    ThresholdFunction { function: ThresholdFunction },
}

impl Strategy {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::LinearThreshold { .. } => "linear-threshold",
            Self::ThresholdFunction { .. } => "threshold-function",
        }
    }

    pub fn build(&self, coeffs: &BeliefCoefficients) -> Result<Box<dyn Policy>> {
        PolicyRegistry::standard().build(self, coeffs)
    }
}

type BuildFn = fn(&Strategy, &BeliefCoefficients) -> Result<Box<dyn Policy>>;

pub struct PolicyRegistry {
    entries: Vec<(&'static [&'static str], BuildFn)>,
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn standard() -> Self {
        let mut registry = Self::empty();
        registry.register(&["linear-threshold", "linear"], |strategy, coeffs| match strategy {
            Strategy::LinearThreshold { t } => Ok(Box::new(LinearThreshold::new(t.clone(), coeffs)?)),
            _ => invalid("strategy is not a linear threshold"),
        });
        registry.register(&["threshold-function", "threshold"], |strategy, coeffs| match strategy {
            Strategy::ThresholdFunction { function } => {
                if function.n() != coeffs.n {
                    return invalid(format!("threshold function has n = {}, game has n = {}", function.n(), coeffs.n));
                }
                Ok(Box::new(ThresholdPolicy::new(function.clone())))
            }
            _ => invalid("strategy is not a threshold function"),
        });
        registry
    }

    /// The first name is canonical and must match [`Strategy::kind_name`].
    pub fn register(&mut self, names: &'static [&'static str], build: BuildFn) {
        self.entries.push((names, build));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().flat_map(|(names, _)| names.iter().copied()).collect()
    }

    /// Canonical name for `name` or one of its aliases.
    pub fn canonical(&self, name: &str) -> Result<&'static str> {
        match self.entries.iter().find(|(names, _)| names.contains(&name)) {
            Some((names, _)) => Ok(names[0]),
            None => invalid(format!("unknown strategy {name:?}; known: {}", self.names().join(", "))),
        }
    }

    pub fn build(&self, strategy: &Strategy, coeffs: &BeliefCoefficients) -> Result<Box<dyn Policy>> {
        let name = self.canonical(strategy.kind_name())?;
        let (_, build) = self.entries.iter().find(|(names, _)| names[0] == name).expect("canonical name");
        build(strategy, coeffs)
    }
}
