//! Monte-Carlo best-response checks, forward play, and the constructive
//! counterexample against linear-threshold equilibria.
//!
//! Every check is conditional on an explicit observation `y_i`: with a flat
//! prior on `θ` there is no unconditional law of observations to sample.

mod policy;

pub use policy::{LinearThreshold, Policy, PolicyRegistry, Strategy, ThresholdPolicy};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{
    build_v, compute_coefficients, posterior_theta, BeliefCoefficients, GameParams, ObservationVector,
};
use crate::error::{invalid, Error, Result};
use crate::threshold::ThresholdFunction;

pub const MIN_SAMPLES: usize = 10_000;
/// Width of the indeterminate band in standard errors.
pub const BAND_SIGMAS: f64 = 3.0;
/// One-sided 99% normal quantile.
const Z99: f64 = 2.326_347_874_040_841;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Consistent,
    Indeterminate,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponseReport {
    pub y_i: ObservationVector,
    pub prescribed_risky: bool,
    /// `1 + Σ_k P̂(peer k plays risky | y_i)`.
    pub lhs: f64,
    /// `E[θ | y_i]`.
    pub rhs: f64,
    pub mc_stderr: f64,
    pub peer_risky: Vec<f64>,
    /// The policy's margin at `y_i` (`h(y_i)` for threshold functions).
    pub h_value: f64,
    pub verdict: Verdict,
    pub consistent: bool,
}

impl BestResponseReport {
    pub fn gap(&self) -> f64 {
        self.lhs - self.rhs
    }

    /// How far the gap points the wrong way (0 when the sign matches).
    pub fn violation(&self) -> f64 {
        if self.prescribed_risky {
            (-self.gap()).max(0.0)
        } else {
            self.gap().max(0.0)
        }
    }
}

/// Standard error of a Bernoulli mean with add-one smoothing, so that an
/// empirical 0 or 1 still reports a nonzero uncertainty.
fn smoothed_variance(successes: usize, samples: usize) -> f64 {
    let p = (successes as f64 + 1.0) / (samples as f64 + 2.0);
    p * (1.0 - p) / samples as f64
}

/// Samples every peer's observation vector given `y_i` and records how often
/// each peer's prescribed action is risky.
struct PeerSampler<'a> {
    coeffs: &'a BeliefCoefficients,
    chol: DMatrix<f64>,
    relay: Normal<f64>,
}

impl<'a> PeerSampler<'a> {
    fn new(coeffs: &'a BeliefCoefficients) -> Result<Self> {
        let chol = coeffs
            .eps_covariance()?
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("peer-noise covariance is degenerate".into()))?
            .l();
        let relay = Normal::new(0.0, coeffs.tau()).map_err(|e| Error::NumericalFailure(e.to_string()))?;
        Ok(Self { coeffs, chol, relay })
    }

    fn risky_counts(
        &self,
        policy: &dyn Policy,
        y: &ObservationVector,
        samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<usize> {
        let dim = self.coeffs.n - 1;
        let means = self.coeffs.peer_signal_means(y);
        let mut z = vec![0.0; dim];
        let mut obs = vec![0.0; self.coeffs.n];
        (0..dim)
            .map(|k| {
                let block_mean: Vec<f64> = std::iter::once(means[k])
                    .chain(means.iter().enumerate().filter(|&(s, _)| s != k).map(|(_, &m)| m))
                    .collect();
                let mut count = 0;
                for _ in 0..samples {
                    for v in z.iter_mut() {
                        *v = StandardNormal.sample(rng);
                    }
                    // peer frame: [x_k, y_ik, {y_lk}]
                    for r in 0..dim {
                        let noise: f64 = (0..=r).map(|c| self.chol[(r, c)] * z[c]).sum();
                        obs[if r == 0 { 0 } else { r + 1 }] = block_mean[r] + noise;
                    }
                    obs[1] = y.x() + self.relay.sample(rng);
                    if policy.is_risky(k + 1, &obs) {
                        count += 1;
                    }
                }
                count
            })
            .collect()
    }
}

fn report_from(
    policy: &dyn Policy,
    coeffs: &BeliefCoefficients,
    y: &ObservationVector,
    counts: &[usize],
    samples: usize,
) -> Result<BestResponseReport> {
    let (rhs, _) = posterior_theta(coeffs, y)?;
    let peer_risky: Vec<f64> = counts.iter().map(|&c| c as f64 / samples as f64).collect();
    let lhs = 1.0 + peer_risky.iter().sum::<f64>();
    let mc_stderr = counts.iter().map(|&c| smoothed_variance(c, samples)).sum::<f64>().sqrt();
    let y_flat = y.to_vec();
    let h_value = policy.margin(0, &y_flat);
    let prescribed_risky = h_value >= 0.0;
    let gap = lhs - rhs;
    let verdict = if gap.abs() <= BAND_SIGMAS * mc_stderr {
        Verdict::Indeterminate
    } else if (gap > 0.0) == prescribed_risky {
        Verdict::Consistent
    } else {
        Verdict::Inconsistent
    };
    Ok(BestResponseReport {
        y_i: y.clone(),
        prescribed_risky,
        lhs,
        rhs,
        mc_stderr,
        peer_risky,
        h_value,
        verdict,
        consistent: verdict != Verdict::Inconsistent,
    })
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < MIN_SAMPLES {
        return invalid(format!("need at least {MIN_SAMPLES} Monte-Carlo samples (got {samples})"));
    }
    Ok(())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Compares the expected payoff of the risky action at `y_i` with the action
/// the policy prescribes to agent 0 (the observer).
pub fn best_response_gap(
    policy: &dyn Policy,
    coeffs: &BeliefCoefficients,
    y: &ObservationVector,
    samples: usize,
    seed: u64,
) -> Result<BestResponseReport> {
    best_response_gap_on_stream(policy, coeffs, y, samples, seed, 0)
}

fn best_response_gap_on_stream(
    policy: &dyn Policy,
    coeffs: &BeliefCoefficients,
    y: &ObservationVector,
    samples: usize,
    seed: u64,
    stream: u64,
) -> Result<BestResponseReport> {
    check_samples(samples)?;
    if policy.n() != coeffs.n || y.n() != coeffs.n {
        return invalid(format!("policy, observation and game must share n = {}", coeffs.n));
    }
    let sampler = PeerSampler::new(coeffs)?;
    let counts = sampler.risky_counts(policy, y, samples, &mut rng_for(seed, stream));
    report_from(policy, coeffs, y, &counts, samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    NearRoot,
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub index: usize,
    pub kind: ProbeKind,
    pub report: BestResponseReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub probes: usize,
    pub consistent: usize,
    pub indeterminate: usize,
    pub inconsistent: usize,
    /// Largest wrong-sign `|lhs − rhs|` over all probes.
    pub worst_gap: f64,
    pub seed: u64,
    pub samples: usize,
    pub near_root_probes: usize,
    pub near_root_in_band: usize,
    pub far_probes: usize,
    pub far_consistent: usize,
    pub pass: bool,
    pub reports: Vec<ProbeReport>,
}

/// Observation points at which to test a threshold function: a quarter lie
/// exactly on the root set (at grid nodes, where `g` carries no interpolation
/// error), the rest at a clear distance from it.
pub fn stratified_probes(
    tf: &ThresholdFunction,
    count: usize,
    seed: u64,
) -> Result<Vec<(ProbeKind, ObservationVector)>> {
    let spec = tf.g().spec();
    let dim = spec.dim();
    let coeffs = tf.coeffs();
    let mut rng = rng_for(seed, u64::MAX);
    let near = count.div_ceil(4);
    let offset_scale = 0.25 * (coeffs.sigma2 + coeffs.tau2).sqrt();
    let interior = |rng: &mut ChaCha8Rng, d: usize| {
        let last = spec.points_per_axis[d] - 1;
        rng.random_range(last / 10..=last - last / 10)
    };
    let mut probes = Vec::with_capacity(count);
    for i in 0..count {
        let (kind, reduced, h) = if i < near {
            let reduced: Vec<f64> = (0..dim).map(|d| spec.coordinate(d, interior(&mut rng, d))).collect();
            (ProbeKind::NearRoot, reduced, 0.0)
        } else {
            let reduced: Vec<f64> = (0..dim)
                .map(|d| {
                    let (lo, hi) = (spec.lower[d], spec.upper[d]);
                    let pad = 0.1 * (hi - lo);
                    rng.random_range(lo + pad..=hi - pad)
                })
                .collect();
            let magnitude = offset_scale * rng.random_range(1.0..8.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (ProbeKind::Far, reduced, sign * magnitude)
        };
        let y_k = tf.g_to_ih(&reduced)? - h;
        let shared = std::iter::once(y_k).chain(reduced[1..].iter().copied()).collect();
        probes.push((kind, ObservationVector::new(reduced[0], shared)?));
    }
    Ok(probes)
}

/// Best-response verification of the symmetric profile induced by `tf`.
///
/// Passes iff at least 99% of far probes are consistent and every near-root
/// probe falls inside the indeterminate band.
pub fn verify_equilibrium(
    tf: &ThresholdFunction,
    probe_count: usize,
    samples: usize,
    seed: u64,
) -> Result<VerificationSummary> {
    let probes = stratified_probes(tf, probe_count, seed)?;
    verify_probes(&ThresholdPolicy::new(tf.clone()), tf.coeffs(), &probes, samples, seed)
}

pub fn verify_probes(
    policy: &dyn Policy,
    coeffs: &BeliefCoefficients,
    probes: &[(ProbeKind, ObservationVector)],
    samples: usize,
    seed: u64,
) -> Result<VerificationSummary> {
    check_samples(samples)?;
    let reports: Vec<ProbeReport> = probes
        .par_iter()
        .enumerate()
        .map(|(index, (kind, y))| {
            let report = best_response_gap_on_stream(policy, coeffs, y, samples, seed, index as u64)?;
            Ok(ProbeReport { index, kind: *kind, report })
        })
        .collect::<Result<_>>()?;

    let count = |pred: &dyn Fn(&ProbeReport) -> bool| reports.iter().filter(|r| pred(r)).count();
    let near_root_probes = count(&|r| r.kind == ProbeKind::NearRoot);
    let near_root_in_band = count(&|r| r.kind == ProbeKind::NearRoot && r.report.verdict == Verdict::Indeterminate);
    let far_probes = reports.len() - near_root_probes;
    let far_consistent = count(&|r| r.kind == ProbeKind::Far && r.report.consistent);
    let pass = far_consistent as f64 >= 0.99 * far_probes as f64 && near_root_in_band == near_root_probes;
    Ok(VerificationSummary {
        probes: reports.len(),
        consistent: count(&|r| r.report.verdict == Verdict::Consistent),
        indeterminate: count(&|r| r.report.verdict == Verdict::Indeterminate),
        inconsistent: count(&|r| r.report.verdict == Verdict::Inconsistent),
        worst_gap: reports.iter().map(|r| r.report.violation()).fold(0.0, f64::max),
        seed,
        samples,
        near_root_probes,
        near_root_in_band,
        far_probes,
        far_consistent,
        pass,
        reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessDirection {
    /// `θ̄_i = t_i − ε` while every peer's expected posterior mean is `+M`:
    /// agent `i` is told to play risky but its peers almost surely play safe.
    Lower,
    /// `θ̄_i = t_i + ε` while every peer's expected posterior mean is `−M`.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub direction: WitnessDirection,
    pub t: Vec<f64>,
    pub eps: f64,
    pub big_m: f64,
    pub y_i: ObservationVector,
    pub posterior_mean: f64,
    /// Chebyshev bound on each peer taking the action opposite to the one
    /// the construction pushes it towards.
    pub chebyshev_bounds: Vec<f64>,
    /// Monte-Carlo estimate of each peer playing risky.
    pub mc_peer_risky: Vec<f64>,
    /// One-sided 99% upper bounds on each peer's opposite-action probability.
    pub mc_opposite_upper99: Vec<f64>,
    /// Whether the prescribed action is a best-response violation.
    pub violates: bool,
    pub report: BestResponseReport,
}

/// Threshold slack that keeps both witness directions informative for a
/// threshold `t_i ∈ [1, n]`.
pub fn default_witness_eps(t_i: f64, n: usize) -> f64 {
    let room = (t_i - 1.0).min(n as f64 - t_i);
    if room > 0.0 {
        0.01f64.min(0.25 * room)
    } else {
        0.01
    }
}

/// `Var(θ̄_j(y_j) | y_i)`, the same for every peer.
pub fn peer_posterior_variance(coeffs: &BeliefCoefficients) -> Result<f64> {
    let cov = coeffs.eps_covariance()?;
    let w = DVector::from_fn(coeffs.n - 1, |r, _| if r == 0 { coeffs.a_n } else { coeffs.b_n });
    Ok((w.transpose() * cov * &w)[0] + coeffs.b_n * coeffs.b_n * coeffs.tau2)
}

/// Builds `y_i` with `V y_iᵀ = (t_i ∓ ε, ±M, …, ±M)` for agent 0 and checks by
/// Monte-Carlo that the linear-threshold action prescribed there is not a
/// best response.
pub fn nonexistence_witness(
    params: &GameParams,
    t: &[f64],
    eps: f64,
    big_m: f64,
    direction: WitnessDirection,
    samples: usize,
    seed: u64,
) -> Result<Witness> {
    let coeffs = compute_coefficients(params)?;
    let n = params.n;
    if !(eps > 0.0 && eps.is_finite()) {
        return invalid(format!("eps must be positive (got {eps})"));
    }
    if !big_m.is_finite() {
        return invalid("M must be finite");
    }
    let policy = LinearThreshold::new(t.to_vec(), &coeffs)?;
    let (own, peers) = match direction {
        WitnessDirection::Lower => (t[0] - eps, big_m),
        WitnessDirection::Upper => (t[0] + eps, -big_m),
    };
    let target = DVector::from_fn(n, |r, _| if r == 0 { own } else { peers });
    let solution = build_v(&coeffs).lu().solve(&target).ok_or_else(|| Error::Internal("V is singular".into()))?;
    let y = ObservationVector::from_slice(solution.as_slice())?;

    let report = best_response_gap(&policy, &coeffs, &y, samples, seed)?;
    let var = peer_posterior_variance(&coeffs)?;
    let chebyshev_bounds = t[1..]
        .iter()
        .map(|&t_j| {
            let distance = match direction {
                WitnessDirection::Lower => big_m - t_j,
                WitnessDirection::Upper => t_j + big_m,
            };
            if distance > 0.0 {
                (var / (distance * distance)).min(1.0)
            } else {
                1.0
            }
        })
        .collect();
    let mc_opposite_upper99 = report
        .peer_risky
        .iter()
        .map(|&p| {
            let opposite = match direction {
                WitnessDirection::Lower => p,
                WitnessDirection::Upper => 1.0 - p,
            };
            let successes = (opposite * samples as f64).round() as usize;
            (opposite + Z99 * smoothed_variance(successes, samples).sqrt()).min(1.0)
        })
        .collect();
    Ok(Witness {
        direction,
        t: t.to_vec(),
        eps,
        big_m,
        posterior_mean: posterior_theta(&coeffs, &y)?.0,
        y_i: y,
        chebyshev_bounds,
        mc_peer_risky: report.peer_risky.clone(),
        mc_opposite_upper99,
        violates: !report.consistent,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayoutResult {
    pub theta: f64,
    pub actions: Vec<u8>,
    pub payoffs: Vec<f64>,
    pub signals: Vec<f64>,
}

/// Draws one realization of every signal and relay at the given `θ`, lets
/// each agent act on its own observation vector, and pays
/// `u_i = α_i (Σ_j α_j − θ)`.
pub fn simulate_playout(params: &GameParams, policy: &dyn Policy, theta: f64, seed: u64) -> Result<PlayoutResult> {
    params.validate()?;
    if policy.n() != params.n {
        return invalid(format!("policy has n = {}, game has n = {}", policy.n(), params.n));
    }
    if !theta.is_finite() {
        return invalid("theta must be finite");
    }
    let n = params.n;
    let mut rng = rng_for(seed, 0);
    let signal_noise = Normal::new(0.0, params.sigma()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let relay_noise = Normal::new(0.0, params.tau()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let signals: Vec<f64> = (0..n).map(|_| theta + signal_noise.sample(&mut rng)).collect();
    let mut actions = Vec::with_capacity(n);
    let mut obs = vec![0.0; n];
    for m in 0..n {
        obs[0] = signals[m];
        let mut slot = 1;
        for (j, &x_j) in signals.iter().enumerate() {
            if j != m {
                obs[slot] = x_j + relay_noise.sample(&mut rng);
                slot += 1;
            }
        }
        actions.push(policy.is_risky(m, &obs) as u8);
    }
    let attackers: f64 = actions.iter().map(|&a| a as f64).sum();
    let payoffs = actions.iter().map(|&a| a as f64 * (attackers - theta)).collect();
    Ok(PlayoutResult { theta, actions, payoffs, signals })
}
