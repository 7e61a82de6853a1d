use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::belief::{compute_coefficients, GameParams};
use crate::engine::{IntegrationScheme, IntegratorRegistry, SchemeSettings};
use crate::error::{invalid, Error, Result};
use crate::grid::{default_points, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    Gh,
    Mc,
}

impl SchemeName {
    fn registry_name(self) -> &'static str {
        match self {
            Self::Gh => "gh",
            Self::Mc => "mc",
        }
    }
}

/// Flags shared by every command. Anything left unset falls back to the
/// `--config` file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeName>,
    #[arg(long = "gh-nodes")]
    pub gh_nodes: Option<usize>,
    #[arg(long = "mc-samples")]
    pub mc_samples: Option<usize>,
    /// Per-axis lower bounds, comma-separated (one value applies to all axes).
    #[arg(long = "grid-lo", value_delimiter = ',', allow_hyphen_values = true)]
    pub grid_lo: Option<Vec<f64>>,
    #[arg(long = "grid-hi", value_delimiter = ',', allow_hyphen_values = true)]
    pub grid_hi: Option<Vec<f64>>,
    #[arg(long = "grid-points", value_delimiter = ',')]
    pub grid_points: Option<Vec<usize>>,
    /// Output directory; without it results go to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "dump-iterates")]
    pub dump_iterates: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n: Option<usize>,
    pub sigma2: Option<f64>,
    pub tau2: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: Option<u64>,
    pub scheme: Option<SchemeName>,
    pub gh_nodes: Option<usize>,
    pub mc_samples: Option<usize>,
    pub grid_lo: Option<Vec<f64>>,
    pub grid_hi: Option<Vec<f64>>,
    pub grid_points: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub dump_iterates: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: GameParams,
    pub scheme: IntegrationScheme,
    pub grid: Option<GridSpec>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub mc_samples: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub dump_iterates: bool,
}

pub const DEFAULT_N: usize = 2;
pub const DEFAULT_SIGMA2: f64 = 1.0;
pub const DEFAULT_TAU2: f64 = 9.0;

impl RunConfig {
    /// Layers flags over the config file over defaults, then validates.
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let n = args.n.or(file.n).unwrap_or(DEFAULT_N);
        let sigma2 = args.sigma2.or(file.sigma2).unwrap_or(DEFAULT_SIGMA2);
        let tau2 = args.tau2.or(file.tau2).unwrap_or(DEFAULT_TAU2);
        let params = GameParams::new(n, sigma2, tau2).map_err(|e| field("n/sigma2/tau2", e))?;

        let tol = args.tol.or(file.tol).unwrap_or(1e-6);
        if tol.is_nan() || tol <= 0.0 {
            return invalid(format!("tol: must be positive (got {tol})"));
        }
        let max_iter = args.max_iter.or(file.max_iter).unwrap_or(200);
        let seed = args.seed.or(file.seed).unwrap_or(0);
        let mc_samples = args.mc_samples.or(file.mc_samples);

        let name = args.scheme.or(file.scheme).unwrap_or(SchemeName::Gh);
        let settings = SchemeSettings { gh_nodes: args.gh_nodes.or(file.gh_nodes), mc_samples, seed };
        let scheme = IntegratorRegistry::standard()
            .scheme(name.registry_name(), &settings, n - 1)
            .map_err(|e| field("scheme", e))?;

        let lo = args.grid_lo.clone().or(file.grid_lo);
        let hi = args.grid_hi.clone().or(file.grid_hi);
        let points = args.grid_points.clone().or(file.grid_points);
        let grid = if lo.is_none() && hi.is_none() && points.is_none() {
            None
        } else {
            let coeffs = compute_coefficients(&params)?;
            let dim = n - 1;
            let default = GridSpec::default_for(&params, &coeffs).ok();
            let fallback = |pick: fn(&GridSpec) -> Vec<f64>| default.as_ref().map(pick);
            let lower = per_axis(lo, dim, "grid-lo")?.or_else(|| fallback(|g| g.lower.clone()));
            let upper = per_axis(hi, dim, "grid-hi")?.or_else(|| fallback(|g| g.upper.clone()));
            let points = per_axis(points, dim, "grid-points")?.unwrap_or_else(|| vec![default_points(n); dim]);
            match (lower, upper) {
                (Some(lower), Some(upper)) => Some(GridSpec::new(lower, upper, points).map_err(|e| field("grid", e))?),
                _ => return invalid("grid: give both --grid-lo and --grid-hi"),
            }
        };

        Ok(Self {
            params,
            scheme,
            grid,
            tol,
            max_iter,
            seed,
            mc_samples,
            output_dir: args.out.clone().or(file.out),
            dump_iterates: args.dump_iterates || file.dump_iterates.unwrap_or(false),
        })
    }
}

fn field(name: &str, err: Error) -> Error {
    match err {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{name}: {msg}")),
        other => other,
    }
}

fn per_axis<T: Clone>(values: Option<Vec<T>>, dim: usize, name: &str) -> Result<Option<Vec<T>>> {
    match values {
        None => Ok(None),
        Some(v) if v.len() == 1 => Ok(Some(vec![v[0].clone(); dim])),
        Some(v) if v.len() == dim => Ok(Some(v)),
        Some(v) => invalid(format!("{name}: expected 1 or {dim} values, got {}", v.len())),
    }
}
