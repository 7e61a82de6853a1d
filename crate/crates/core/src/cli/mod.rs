//! Command-line front end for the `gglab` binary.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{CommonArgs, ConfigFile, RunConfig, SchemeName};

use crate::belief::compute_coefficients;
use crate::engine::{check_conditions, solve, SolveDiagnostics, SolveOptions};
use crate::error::{invalid, Error, Result};
use crate::grid::GridFunction;
use crate::threshold::ThresholdFunction;
use crate::verify::{
    default_witness_eps, nonexistence_witness, simulate_playout, verify_equilibrium, PolicyRegistry, Strategy,
    WitnessDirection,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_CONDITION: u8 = 3;
pub const EXIT_NO_CONVERGENCE: u8 = 4;
pub const EXIT_VERIFY_FAIL: u8 = 5;

const DEFAULT_SOLVE_OUT: &str = "gglab-out";
const DEFAULT_VERIFY_SAMPLES: usize = 100_000;
const DEFAULT_PROBES: usize = 200;
const DEFAULT_BIG_M: f64 = 1e6;

#[derive(Debug, Parser)]
#[command(name = "gglab", version, about = "Threshold equilibria of a global game with relayed signals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print belief coefficients and their identities.
    Coeffs {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Report the contraction conditions; exit 3 when they fail.
    Check {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Iterate the best-response operator to a fixed point.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Monte-Carlo best-response check of a solved threshold function.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Solution JSON written by `solve` (or its CSV).
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        probes: Option<usize>,
        /// Samples per probe; defaults to --mc-samples or 100000.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Build the observation that refutes a linear-threshold profile.
    Witness {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        t: Vec<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long = "big-m")]
        big_m: Option<f64>,
        #[arg(long)]
        direction: Option<WitnessDirection>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Play one round at a fixed θ.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        /// `linear` (with --t) or a path to a solution or strategy JSON.
        #[arg(long, default_value = "linear")]
        strategy: String,
        #[arg(long, value_delimiter = ',')]
        t: Option<Vec<f64>>,
    },
}

impl clap::ValueEnum for WitnessDirection {
    fn value_variants<'a>() -> &'a [Self] {
        &[Self::Lower, Self::Upper]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Self::Lower => "lower",
            Self::Upper => "upper",
        }))
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { EXIT_OK });
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_INVALID);
    }
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::Json(_) => EXIT_INVALID,
        Error::Divergence(_) => EXIT_NO_CONVERGENCE,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => EXIT_INVALID,
        _ => 1,
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("GGLAB_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::InvalidInput(format!("GGLAB_THREADS: expected a positive integer, got {raw:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn execute(command: Command) -> Result<u8> {
    match command {
        Command::Coeffs { common } => {
            let cfg = RunConfig::resolve(&common)?;
            let coeffs = compute_coefficients(&cfg.params)?;
            let mut value = serde_json::to_value(&coeffs)?;
            value["identities"] = json!({
                "a_n + (n-1) b_n": coeffs.a_n + (coeffs.n - 1) as f64 * coeffs.b_n,
                "c_n + d_n": coeffs.c_n + coeffs.d_n,
            });
            emit(&cfg, "coeffs.json", &value)?;
            Ok(EXIT_OK)
        }
        Command::Check { common } => {
            let cfg = RunConfig::resolve(&common)?;
            let report = check_conditions(&cfg.params)?;
            emit(&cfg, "conditions.json", &report)?;
            Ok(if report.banach_ok { EXIT_OK } else { EXIT_CONDITION })
        }
        Command::Solve { common } => run_solve(&RunConfig::resolve(&common)?),
        Command::Verify { common, solution, probes, samples } => {
            let cfg = RunConfig::resolve(&common)?;
            let tf = load_solution(&solution, &cfg)?;
            let samples = samples.or(cfg.mc_samples).unwrap_or(DEFAULT_VERIFY_SAMPLES);
            let summary = verify_equilibrium(&tf, probes.unwrap_or(DEFAULT_PROBES), samples, cfg.seed)?;
            emit(&cfg, "verify.json", &summary)?;
            Ok(if summary.pass { EXIT_OK } else { EXIT_VERIFY_FAIL })
        }
        Command::Witness { common, t, eps, big_m, direction, samples } => {
            let cfg = RunConfig::resolve(&common)?;
            if t.len() != cfg.params.n {
                return invalid(format!("t: expected {} thresholds, got {}", cfg.params.n, t.len()));
            }
            let eps = eps.unwrap_or_else(|| default_witness_eps(t[0], cfg.params.n));
            let samples = samples.or(cfg.mc_samples).unwrap_or(DEFAULT_VERIFY_SAMPLES);
            let directions = match direction {
                Some(d) => vec![d],
                None => vec![WitnessDirection::Lower, WitnessDirection::Upper],
            };
            let witnesses = directions
                .into_iter()
                .map(|d| {
                    nonexistence_witness(&cfg.params, &t, eps, big_m.unwrap_or(DEFAULT_BIG_M), d, samples, cfg.seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let refuted = witnesses.iter().any(|w| w.violates);
            emit(&cfg, "witness.json", &json!({ "refuted": refuted, "witnesses": witnesses }))?;
            Ok(if refuted { EXIT_OK } else { EXIT_VERIFY_FAIL })
        }
        Command::Simulate { common, theta, strategy, t } => {
            let cfg = RunConfig::resolve(&common)?;
            let coeffs = compute_coefficients(&cfg.params)?;
            let strategy = load_strategy(&strategy, t, &cfg)?;
            let policy = PolicyRegistry::standard().build(&strategy, &coeffs)?;
            let result = simulate_playout(&cfg.params, policy.as_ref(), theta, cfg.seed)?;
            emit(&cfg, "playout.json", &result)?;
            Ok(EXIT_OK)
        }
    }
}

fn run_solve(cfg: &RunConfig) -> Result<u8> {
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_SOLVE_OUT));
    let staging = Staging::new(&out)?;
    let options = SolveOptions {
        grid: cfg.grid.clone(),
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..SolveOptions::new(cfg.scheme.clone())
    };
    let dump = cfg.dump_iterates;
    let iterates = staging.path().join("iterates");
    if dump {
        fs::create_dir_all(&iterates)?;
    }
    let outcome = solve(&cfg.params, &options, &mut |k, g| {
        if dump {
            write_grid(&iterates.join(format!("iter_{k:04}.csv")), g)?;
        }
        Ok(())
    });
    match outcome {
        Ok((tf, diagnostics)) => {
            write_grid(&staging.path().join("solution.csv"), tf.g())?;
            write_json(&staging.path().join("solution.json"), &tf)?;
            write_json(&staging.path().join("diagnostics.json"), &diagnostics)?;
            staging.commit()?;
            report_timing(&diagnostics);
            if diagnostics.converged {
                Ok(EXIT_OK)
            } else {
                eprintln!("warning: no convergence within {} iterations", diagnostics.iterations);
                Ok(EXIT_NO_CONVERGENCE)
            }
        }
        Err(Error::Divergence(diagnostics)) => {
            drop(staging);
            report_timing(&diagnostics);
            Err(Error::Divergence(diagnostics))
        }
        Err(e) => Err(e),
    }
}

fn report_timing(d: &SolveDiagnostics) {
    eprintln!("wall_time: {:.3}s ({} iterations)", d.wall_time, d.iterations);
}

fn load_solution(path: &Path, cfg: &RunConfig) -> Result<ThresholdFunction> {
    let file = fs::File::open(path).map_err(|e| Error::InvalidInput(format!("solution {}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    if path.extension().is_some_and(|ext| ext == "csv") {
        let coeffs = compute_coefficients(&cfg.params)?;
        let g = GridFunction::read_csv(reader, coeffs.a_n, cfg.params.n)?;
        return ThresholdFunction::new(g, coeffs);
    }
    let value: Value = serde_json::from_reader(reader)
        .map_err(|e| Error::InvalidInput(format!("solution {}: {e}", path.display())))?;
    serde_json::from_value(value).map_err(|e| Error::InvalidInput(format!("solution {}: {e}", path.display())))
}

fn load_strategy(spec: &str, t: Option<Vec<f64>>, cfg: &RunConfig) -> Result<Strategy> {
    let registry = PolicyRegistry::standard();
    if let Ok(name) = registry.canonical(spec) {
        return match (name, t) {
            ("linear-threshold", Some(t)) => Ok(Strategy::LinearThreshold { t }),
            ("linear-threshold", None) => invalid("strategy linear: --t is required"),
            _ => invalid(format!("strategy {spec}: pass the path of a solution JSON instead")),
        };
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("strategy {spec}: {e}")))?;
    if let Ok(strategy) = serde_json::from_str::<Strategy>(&text) {
        return Ok(strategy);
    }
    Ok(Strategy::ThresholdFunction { function: load_solution(path, cfg)? })
}

/// Writes to `<out>/<name>` when an output directory is set, else to stdout.
fn emit<T: Serialize>(cfg: &RunConfig, name: &str, value: &T) -> Result<()> {
    match &cfg.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_json(&dir.join(name), value)
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_grid(path: &Path, g: &GridFunction) -> Result<()> {
    write_atomic(path, g.to_csv_string().as_bytes())
}

/// Temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::InvalidInput(format!("bad output path {}", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp-{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Hidden directory inside `out` that collects a command's artifacts; they
/// are moved into `out` only on [`Staging::commit`] and discarded otherwise.
struct Staging {
    out: PathBuf,
    dir: PathBuf,
    committed: bool,
}

impl Staging {
    fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        let dir = out.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir)?;
        Ok(Self { out: out.to_path_buf(), dir, committed: false })
    }

    fn path(&self) -> &Path {
        &self.dir
    }

    fn commit(mut self) -> Result<()> {
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let target = self.out.join(entry.file_name());
            if entry.file_type()?.is_dir() && target.exists() {
                fs::remove_dir_all(&target)?;
            }
            fs::rename(entry.path(), target)?;
        }
        fs::remove_dir(&self.dir)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_command() {
        for args in [
            vec!["gglab", "coeffs", "--n", "3"],
            vec!["gglab", "check", "--sigma2", "1", "--tau2", "9"],
            vec!["gglab", "solve", "--grid-lo", "-30", "--grid-hi", "40", "--grid-points", "257", "--dump-iterates"],
            vec!["gglab", "verify", "--solution", "s.json", "--probes", "10"],
            vec!["gglab", "witness", "--t", "1,1", "--direction", "upper"],
            vec!["gglab", "simulate", "--theta", "-0.5", "--t", "1.5,1.5"],
        ] {
            Cli::try_parse_from(&args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
        assert!(Cli::try_parse_from(["gglab", "coeffs", "--n", "two"]).is_err());
        assert!(Cli::try_parse_from(["gglab", "verify"]).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code_for(&Error::InvalidInput("x".into())), EXIT_INVALID);
        let missing = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code_for(&Error::Io(missing)), EXIT_INVALID);
    }

    #[test]
    fn atomic_write_and_staging() {
        let dir = std::env::temp_dir().join(format!("gglab-cli-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");

        let out = dir.join("out");
        {
            let staging = Staging::new(&out).unwrap();
            write_atomic(&staging.path().join("x.csv"), b"x").unwrap();
        }
        assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
        let staging = Staging::new(&out).unwrap();
        write_atomic(&staging.path().join("x.csv"), b"x").unwrap();
        staging.commit().unwrap();
        let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![OsString::from("x.csv")]);
        fs::remove_dir_all(&dir).unwrap();
    }
}
