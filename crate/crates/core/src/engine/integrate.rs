//! Expectations under a standard multivariate normal.
//!
//! Backends implement [`Integrator`] and are registered by name in an
//! [`IntegratorRegistry`]; callers pick one at runtime from an
//! [`IntegrationScheme`].

use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const MAX_GH_DIM: usize = 4;
pub const MIN_MC_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// Standard error of `value`; zero for deterministic rules.
    pub stderr: f64,
}

pub trait Integrator: Send + Sync {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// `E[f(Z)]` for `Z ~ N(0, I_dim)`. `stream` selects an independent,
    /// reproducible random substream for stochastic backends.
    fn expectation(&self, stream: u64, f: &mut dyn FnMut(&[f64]) -> f64) -> Estimate;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IntegrationScheme {
    GaussHermiteTensor { nodes_per_dim: usize },
    MonteCarlo { sample_count: usize, seed: u64 },
}

impl IntegrationScheme {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::GaussHermiteTensor { .. } => "gauss-hermite-tensor",
            Self::MonteCarlo { .. } => "monte-carlo",
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            Self::GaussHermiteTensor { nodes_per_dim } => {
                if dim > MAX_GH_DIM {
                    return invalid(format!(
                        "gauss-hermite is limited to integral dimension {MAX_GH_DIM} (got {dim}); use monte-carlo"
                    ));
                }
                if nodes_per_dim == 0 {
                    return invalid("gauss-hermite needs at least one node per dimension");
                }
            }
            Self::MonteCarlo { sample_count, .. } => {
                if sample_count < MIN_MC_SAMPLES {
                    return invalid(format!(
                        "monte-carlo needs at least {MIN_MC_SAMPLES} samples (got {sample_count})"
                    ));
                }
            }
        }
        Ok(())
    }

    /// A cheaper rule of the same family, used to estimate integration error.
    /// `None` for Monte-Carlo, which reports its own standard error.
    pub fn coarser(&self) -> Option<Self> {
        match *self {
            Self::GaussHermiteTensor { nodes_per_dim } if nodes_per_dim >= 4 => {
                Some(Self::GaussHermiteTensor { nodes_per_dim: nodes_per_dim / 2 })
            }
            _ => None,
        }
    }

    pub fn build(&self, dim: usize) -> Result<Box<dyn Integrator>> {
        IntegratorRegistry::standard().build(self, dim)
    }
}

/// Gauss–Hermite order used when none is given: the tensor rule grows as
/// `nodes^dim`, so the order drops with dimension.
pub fn default_gh_nodes(dim: usize) -> usize {
    match dim {
        0..=2 => 32,
        3 => 12,
        _ => 8,
    }
}

/// Knobs from which a scheme of any registered kind can be built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemeSettings {
    pub gh_nodes: Option<usize>,
    pub mc_samples: Option<usize>,
    pub seed: u64,
}

type BuildFn = fn(&IntegrationScheme, usize) -> Result<Box<dyn Integrator>>;
type ConfigureFn = fn(&SchemeSettings, usize) -> IntegrationScheme;

struct Entry {
    names: &'static [&'static str],
    build: BuildFn,
    configure: ConfigureFn,
}

pub struct IntegratorRegistry {
    entries: Vec<Entry>,
}

impl IntegratorRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// The built-in backends: `gh` / `gauss-hermite-tensor` and `mc` / `monte-carlo`.
    pub fn standard() -> Self {
        let mut registry = Self::empty();
        registry.register(
            &["gauss-hermite-tensor", "gh"],
            |scheme, dim| match *scheme {
                IntegrationScheme::GaussHermiteTensor { nodes_per_dim } => {
                    Ok(Box::new(GaussHermiteTensor::new(nodes_per_dim, dim)?))
                }
                _ => invalid("scheme is not gauss-hermite"),
            },
            |settings, dim| IntegrationScheme::GaussHermiteTensor {
                nodes_per_dim: settings.gh_nodes.unwrap_or_else(|| default_gh_nodes(dim)),
            },
        );
        registry.register(
            &["monte-carlo", "mc"],
            |scheme, dim| match *scheme {
                IntegrationScheme::MonteCarlo { sample_count, seed } => {
                    Ok(Box::new(MonteCarlo::new(sample_count, seed, dim)?))
                }
                _ => invalid("scheme is not monte-carlo"),
            },
            |settings, _| IntegrationScheme::MonteCarlo {
                sample_count: settings.mc_samples.unwrap_or(100_000),
                seed: settings.seed,
            },
        );
        registry
    }

    /// The first name is canonical and must match [`IntegrationScheme::kind_name`].
    pub fn register(&mut self, names: &'static [&'static str], build: BuildFn, configure: ConfigureFn) {
        self.entries.push(Entry { names, build, configure });
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().flat_map(|e| e.names.iter().copied()).collect()
    }

    fn lookup(&self, name: &str) -> Result<&Entry> {
        match self.entries.iter().find(|e| e.names.contains(&name)) {
            Some(entry) => Ok(entry),
            None => invalid(format!("unknown integration scheme {name:?}; known: {}", self.names().join(", "))),
        }
    }

    /// Scheme for a registered name, filled in from `settings` and validated.
    pub fn scheme(&self, name: &str, settings: &SchemeSettings, dim: usize) -> Result<IntegrationScheme> {
        let scheme = (self.lookup(name)?.configure)(settings, dim);
        scheme.validate(dim)?;
        Ok(scheme)
    }

    pub fn build(&self, scheme: &IntegrationScheme, dim: usize) -> Result<Box<dyn Integrator>> {
        scheme.validate(dim)?;
        (self.lookup(scheme.kind_name())?.build)(scheme, dim)
    }
}

/// Tensor-product Gauss–Hermite rule in probabilists' form.
pub struct GaussHermiteTensor {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermiteTensor {
    pub fn new(nodes_per_dim: usize, dim: usize) -> Result<Self> {
        IntegrationScheme::GaussHermiteTensor { nodes_per_dim }.validate(dim)?;
        if dim == 0 {
            return invalid("integral dimension must be positive");
        }
        let order = NonZeroUsize::new(nodes_per_dim).expect("validated above");
        // ∫ e^{−x²} f(x) dx  →  E f(Z) with z = √2 x, w / √π
        let rule: Vec<(f64, f64)> = GaussHermite::new(order)
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (x * std::f64::consts::SQRT_2, w / std::f64::consts::PI.sqrt()))
            .collect();

        let count = nodes_per_dim.pow(dim as u32);
        let mut points = Vec::with_capacity(count * dim);
        let mut weights = Vec::with_capacity(count);
        for flat in 0..count {
            let mut rest = flat;
            let mut weight = 1.0;
            let start = points.len();
            points.resize(start + dim, 0.0);
            for d in (0..dim).rev() {
                let (z, w) = rule[rest % nodes_per_dim];
                points[start + d] = z;
                weight *= w;
                rest /= nodes_per_dim;
            }
            weights.push(weight);
        }
        Ok(Self { dim, points, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl Integrator for GaussHermiteTensor {
    fn name(&self) -> &'static str {
        "gauss-hermite-tensor"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn expectation(&self, _stream: u64, f: &mut dyn FnMut(&[f64]) -> f64) -> Estimate {
        let value = self.points.chunks_exact(self.dim).zip(&self.weights).map(|(z, w)| w * f(z)).sum();
        Estimate { value, stderr: 0.0 }
    }
}

/// Plain Monte-Carlo with a ChaCha8 stream per call.
pub struct MonteCarlo {
    dim: usize,
    samples: usize,
    seed: u64,
}

impl MonteCarlo {
    pub fn new(samples: usize, seed: u64, dim: usize) -> Result<Self> {
        IntegrationScheme::MonteCarlo { sample_count: samples, seed }.validate(dim)?;
        if dim == 0 {
            return invalid("integral dimension must be positive");
        }
        Ok(Self { dim, samples, seed })
    }
}

impl Integrator for MonteCarlo {
    fn name(&self) -> &'static str {
        "monte-carlo"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn expectation(&self, stream: u64, f: &mut dyn FnMut(&[f64]) -> f64) -> Estimate {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let mut z = vec![0.0; self.dim];
        let (mut mean, mut m2) = (0.0, 0.0);
        for count in 1..=self.samples {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let x = f(&z);
            let delta = x - mean;
            mean += delta / count as f64;
            m2 += delta * (x - mean);
        }
        let n = self.samples as f64;
        Estimate { value: mean, stderr: (m2 / (n - 1.0) / n).sqrt() }
    }
}
