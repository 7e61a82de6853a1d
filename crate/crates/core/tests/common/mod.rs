//! Oracles shared by the integration and acceptance targets. None of them
//! reuse the closed forms under test.
#![allow(dead_code)]

use gglab::belief::{GameParams, ObservationVector};
use gglab::engine::{solve, IntegrationScheme, SolveDiagnostics, SolveOptions};
use gglab::grid::GridSpec;
use gglab::threshold::ThresholdFunction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Posterior of θ under a flat prior by brute-force quadrature on a grid of
/// `points` nodes spanning ±10 posterior standard deviations.
pub fn grid_bayes_posterior(obs: &[(f64, f64)], points: usize) -> (f64, f64) {
    let log_lik = |theta: f64| -> f64 { obs.iter().map(|&(v, var)| -(v - theta).powi(2) / (2.0 * var)).sum() };
    let moments = |lo: f64, hi: f64| -> (f64, f64) {
        let h = (hi - lo) / (points - 1) as f64;
        let thetas: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
        let logs: Vec<f64> = thetas.iter().map(|&t| log_lik(t)).collect();
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (t, l) in thetas.iter().zip(&logs) {
            let p = (l - peak).exp();
            w += p;
            m1 += p * t;
            m2 += p * t * t;
        }
        let mean = m1 / w;
        (mean, m2 / w - mean * mean)
    };
    // coarse pass over the hull of the data to locate the mass
    let spread = obs.iter().map(|o| o.1.sqrt()).fold(0.0, f64::max);
    let lo = obs.iter().map(|o| o.0).fold(f64::INFINITY, f64::min) - 12.0 * spread;
    let hi = obs.iter().map(|o| o.0).fold(f64::NEG_INFINITY, f64::max) + 12.0 * spread;
    let (m0, v0) = moments(lo, hi);
    let sd = v0.sqrt();
    // centered refinement, then one more recentering
    let (m1, v1) = moments(m0 - 10.0 * sd, m0 + 10.0 * sd);
    let sd1 = v1.sqrt();
    let (m, v) = moments(m1 - 10.0 * sd1, m1 + 10.0 * sd1);
    // second-moment form loses digits away from zero; recompute about the mean
    let h = 20.0 * v.sqrt() / (points - 1) as f64;
    let (lo, mut w, mut c2) = (m - 10.0 * v.sqrt(), 0.0, 0.0);
    let peak = log_lik(m);
    for i in 0..points {
        let t = lo + h * i as f64;
        let p = (log_lik(t) - peak).exp();
        w += p;
        c2 += p * (t - m) * (t - m);
    }
    (m, c2 / w)
}

/// Draws peer `k`'s observation given the observer's `y` from the generative
/// model: θ from its posterior, each peer's private noise given the relayed
/// sum, and fresh relay noise. Returns `[x_k, y_lk (other slots ascending), y_ik]`.
pub fn generative_peer_draw(params: &GameParams, y: &ObservationVector, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (s2, t2) = (params.sigma2, params.tau2);
    let (theta_mean, theta_var) = {
        let mut obs = vec![(y.x(), s2)];
        obs.extend(y.shared().iter().map(|&v| (v, s2 + t2)));
        let precision: f64 = obs.iter().map(|o| 1.0 / o.1).sum();
        (obs.iter().map(|o| o.0 / o.1).sum::<f64>() / precision, 1.0 / precision)
    };
    let theta = theta_mean + theta_var.sqrt() * normal(rng);
    let shrink = s2 / (s2 + t2);
    let xi_sd = (s2 * t2 / (s2 + t2)).sqrt();
    let peers: Vec<f64> = y
        .shared()
        .iter()
        .map(|&relayed| {
            let sum = relayed - theta;
            theta + shrink * sum + xi_sd * normal(rng)
        })
        .collect();
    let relay = Normal::new(0.0, t2.sqrt()).unwrap();
    let mut out = vec![peers[k]];
    for (l, &x_l) in peers.iter().enumerate() {
        if l != k {
            out.push(x_l + relay.sample(rng));
        }
    }
    out.push(y.x() + relay.sample(rng));
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub struct Moments {
    pub count: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl Moments {
    pub fn of(samples: impl Iterator<Item = Vec<f64>>) -> Self {
        let mut count = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<Vec<f64>> = Vec::new();
        for s in samples {
            if count == 0 {
                mean = vec![0.0; s.len()];
                m2 = vec![vec![0.0; s.len()]; s.len()];
            }
            count += 1;
            let delta: Vec<f64> = s.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for (m, d) in mean.iter_mut().zip(&delta) {
                *m += d / count as f64;
            }
            for i in 0..s.len() {
                for j in 0..s.len() {
                    m2[i][j] += delta[i] * (s[j] - mean[j]);
                }
            }
        }
        let cov = m2.iter().map(|row| row.iter().map(|v| v / (count - 1) as f64).collect()).collect();
        Self { count, mean, cov }
    }

    pub fn mean_se(&self, i: usize) -> f64 {
        (self.cov[i][i] / self.count as f64).sqrt()
    }

    /// Gaussian standard error of the `(i, j)` sample covariance.
    pub fn cov_se(&self, i: usize, j: usize) -> f64 {
        ((self.cov[i][i] * self.cov[j][j] + self.cov[i][j].powi(2)) / self.count as f64).sqrt()
    }
}

pub fn reference_params() -> GameParams {
    GameParams::new(2, 1.0, 9.0).unwrap()
}

pub fn reference_options(tol: f64) -> SolveOptions {
    SolveOptions {
        grid: Some(GridSpec::uniform(1, -30.0, 40.0, 257).unwrap()),
        tol,
        max_iter: 200,
        ..SolveOptions::new(IntegrationScheme::GaussHermiteTensor { nodes_per_dim: 32 })
    }
}

pub fn reference_solution(tol: f64) -> (ThresholdFunction, SolveDiagnostics) {
    solve(&reference_params(), &reference_options(tol), &mut |_, _| Ok(())).unwrap()
}

/// Parameters at `τ/σ = ratio` scaled until the sufficient condition holds
/// with relative room `margin`.
pub fn contracting_params(n: usize, ratio: f64, margin: f64) -> GameParams {
    let base = GameParams::new(n, 1.0, ratio * ratio).unwrap();
    let scale = gglab::engine::sufficient_noise_scale(&base, margin).unwrap();
    base.scaled(scale).unwrap()
}
