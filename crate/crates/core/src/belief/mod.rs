//! Closed-form Gaussian conditioning for the information structure.
//!
//! Agent `i` observes its own signal `x_i = θ + ξ_i` and one relayed copy
//! `y_ji = x_j + ζ_ji` of every other agent's signal. With a flat prior on
//! `θ`, all posteriors are Gaussian and the coefficients depend only on
//! `(n, σ², τ²)`.
//!
//! Agent indexing is always from the observer's point of view: the observer
//! is agent 0 and peer slot `s` is agent `s + 1`. Shared observations are
//! stored in that canonical order.

mod flat_prior;

pub use flat_prior::{condition_flat_location, FlatLocationPosterior};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub n: usize,
    pub sigma2: f64,
    pub tau2: f64,
}

impl GameParams {
    pub fn new(n: usize, sigma2: f64, tau2: f64) -> Result<Self> {
        let params = Self { n, sigma2, tau2 };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return invalid(format!("n must be at least 2 (got {})", self.n));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return invalid(format!("sigma2 must be positive and finite (got {})", self.sigma2));
        }
        if !(self.tau2.is_finite() && self.tau2 > 0.0) {
            return invalid(format!("tau2 must be positive and finite (got {})", self.tau2));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn tau(&self) -> f64 {
        self.tau2.sqrt()
    }

    /// Same noise ratio `τ/σ`, both standard deviations multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        Self::new(self.n, self.sigma2 * scale * scale, self.tau2 * scale * scale)
    }
}

/// One agent's private information: its own signal and the relayed signals
/// of its peers, in canonical slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawObservation", into = "RawObservation")]
pub struct ObservationVector {
    x: f64,
    shared: Vec<f64>,
    z: f64,
}

#[derive(Serialize, Deserialize)]
struct RawObservation {
    x_i: f64,
    shared: Vec<f64>,
    #[serde(default, skip_deserializing)]
    z_i: f64,
}

impl TryFrom<RawObservation> for ObservationVector {
    type Error = crate::Error;

    fn try_from(raw: RawObservation) -> Result<Self> {
        Self::new(raw.x_i, raw.shared)
    }
}

impl From<ObservationVector> for RawObservation {
    fn from(y: ObservationVector) -> Self {
        Self { x_i: y.x, z_i: y.z, shared: y.shared }
    }
}

impl ObservationVector {
    pub fn new(x: f64, shared: Vec<f64>) -> Result<Self> {
        if shared.is_empty() {
            return invalid("an observation vector needs at least one shared signal");
        }
        if !x.is_finite() || shared.iter().any(|v| !v.is_finite()) {
            return invalid("observation values must be finite");
        }
        let z = shared.iter().sum();
        Ok(Self { x, shared, z })
    }

    /// Builds `(x, shared)` from a flat slice `[x, shared...]`.
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        match values.split_first() {
            Some((&x, rest)) => Self::new(x, rest.to_vec()),
            None => invalid("empty observation"),
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn shared(&self) -> &[f64] {
        &self.shared
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// Number of agents implied by this vector.
    pub fn n(&self) -> usize {
        self.shared.len() + 1
    }

    pub fn to_vec(&self) -> Vec<f64> {
        std::iter::once(self.x).chain(self.shared.iter().copied()).collect()
    }

    /// `(x, shared without slot k)`: the argument of the root function when
    /// slot `k` is the one solved for.
    pub fn reduced(&self, k: usize) -> Vec<f64> {
        std::iter::once(self.x)
            .chain(self.shared.iter().enumerate().filter(|&(s, _)| s != k).map(|(_, &v)| v))
            .collect()
    }
}

/// All Gaussian conditioning constants of a game instance.
///
/// `diag_n` and `offdiag_n` are the diagonal and off-diagonal entries of the
/// lower block of `V`; they are kept apart from `gamma2_n`, the variance of a
/// peer's signal given the observer's information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefCoefficients {
    pub n: usize,
    pub sigma2: f64,
    pub tau2: f64,
    pub eta2_n: f64,
    pub a_n: f64,
    pub b_n: f64,
    pub eta2_prev: f64,
    pub a_prev: f64,
    pub b_prev: f64,
    pub gamma2_n: f64,
    pub c_n: f64,
    pub d_n: f64,
    pub e_n: f64,
    pub w_n: f64,
    pub beta_n: f64,
    pub diag_n: f64,
    pub offdiag_n: f64,
    /// `n × n`, row-major.
    #[serde(rename = "V")]
    pub v: Vec<f64>,
}

/// `(η², a, b)` for an observer fusing its own signal with `m − 1` relayed ones.
fn fusion_weights(m: usize, sigma2: f64, tau2: f64) -> (f64, f64, f64) {
    // one division per weight keeps e.g. a = 10/11 correctly rounded
    let pair = sigma2 + tau2;
    let den = pair + (m as f64 - 1.0) * sigma2;
    (sigma2 * pair / den, pair / den, sigma2 / den)
}

pub fn compute_coefficients(params: &GameParams) -> Result<BeliefCoefficients> {
    params.validate()?;
    let GameParams { n, sigma2, tau2 } = *params;
    let nf = n as f64;

    let (eta2_n, a_n, b_n) = fusion_weights(n, sigma2, tau2);
    let (eta2_prev, a_prev, b_prev) = fusion_weights(n - 1, sigma2, tau2);

    let q = eta2_prev + sigma2;
    let gamma2_n = tau2 * q / (tau2 + q);
    let c_n = tau2 / (tau2 + q);
    let d_n = q / (tau2 + q);

    let e_n = (c_n * a_prev).max(d_n).max(c_n * b_prev);
    let spread = e_n * (nf * a_n + (nf - 2.0) * b_n);
    let contraction_num = (nf - 1.0) * (spread + b_n) / (b_n * b_n);
    let lipschitz_num = (nf - 1.0) * (spread * (b_n + 2.0 * a_n) + b_n * b_n) / (a_n * b_n * b_n);
    let w_n = contraction_num.max(lipschitz_num);

    let beta_n = b_n + a_n * c_n * a_prev + (nf - 2.0) * b_n * c_n * a_prev;
    let diag_n = a_n * d_n + (nf - 2.0) * b_n * c_n * b_prev;
    let offdiag_n = a_n * c_n * b_prev + b_n * d_n + (nf - 3.0) * b_n * c_n * b_prev;

    let mut v = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            v[row * n + col] = match (row, col) {
                (0, 0) => a_n,
                (0, _) => b_n,
                (_, 0) => beta_n,
                (r, c) if r == c => diag_n,
                _ => offdiag_n,
            };
        }
    }

    Ok(BeliefCoefficients {
        n,
        sigma2,
        tau2,
        eta2_n,
        a_n,
        b_n,
        eta2_prev,
        a_prev,
        b_prev,
        gamma2_n,
        c_n,
        d_n,
        e_n,
        w_n,
        beta_n,
        diag_n,
        offdiag_n,
        v,
    })
}

impl BeliefCoefficients {
    pub fn params(&self) -> GameParams {
        GameParams { n: self.n, sigma2: self.sigma2, tau2: self.tau2 }
    }

    pub fn tau(&self) -> f64 {
        self.tau2.sqrt()
    }

    /// `E[x_j | y_i]` for every peer slot `j`.
    pub fn peer_signal_means(&self, y: &ObservationVector) -> Vec<f64> {
        let own = self.c_n * self.a_prev * y.x();
        y.shared().iter().map(|&y_ji| own + self.d_n * y_ji + self.c_n * self.b_prev * (y.z() - y_ji)).collect()
    }

    /// Covariance of `(ε_k, {ε_lk})` given `y_i`. By exchangeability it does
    /// not depend on `k` or on the observed values.
    pub fn eps_covariance(&self) -> Result<DMatrix<f64>> {
        let model = PeerBlockModel::new(self.n, self.sigma2, self.tau2, 0);
        let obs = DVector::zeros(self.n);
        Ok(model.condition(&obs, false)?.cov)
    }

    pub fn v_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.v)
    }
}

/// Posterior of `θ` from independent unbiased Gaussian observations under a
/// flat prior, given as `(value, variance)` pairs.
pub fn fuse_gaussian_observations(obs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if obs.is_empty() {
        return invalid("cannot fuse an empty set of observations");
    }
    if let Some(&(_, var)) = obs.iter().find(|(_, var)| !(var.is_finite() && *var > 0.0)) {
        return invalid(format!("observation variance must be positive (got {var})"));
    }
    // canonical summation order makes the result exactly permutation invariant
    let mut sorted = obs.to_vec();
    sorted.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.1.total_cmp(&r.1)));
    let precision: f64 = sorted.iter().map(|(_, var)| 1.0 / var).sum();
    let weighted: f64 = sorted.iter().map(|(v, var)| v / var).sum();
    let variance = 1.0 / precision;
    Ok((variance * weighted, variance))
}

fn check_dim(coeffs: &BeliefCoefficients, y: &ObservationVector) -> Result<()> {
    if y.n() != coeffs.n {
        return invalid(format!("observation has {} entries but the game has n = {}", y.n(), coeffs.n));
    }
    Ok(())
}

/// `E[θ | y_i]` and `Var[θ | y_i]`.
pub fn posterior_theta(coeffs: &BeliefCoefficients, y: &ObservationVector) -> Result<(f64, f64)> {
    check_dim(coeffs, y)?;
    Ok((coeffs.a_n * y.x() + coeffs.b_n * y.z(), coeffs.eta2_n))
}

/// Law of peer `k`'s observation vector given the observer's `y_i`.
///
/// `x_k = mean_xk + ε_k`, `y_lk = mean_y_lk[..] + ε_lk` for the other peers
/// `l` in slot order, and `y_ik = x_i + ε_ik` with `ε_ik ~ N(0, τ²)`
/// independent of the block `(ε_k, {ε_lk})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalPeerLaw {
    pub mean_xk: f64,
    pub mean_y_lk: Vec<f64>,
    pub cov_eps: DMatrix<f64>,
    pub var_eps_ik: f64,
}

impl ConditionalPeerLaw {
    /// `[mean_xk, mean_y_lk...]`, aligned with the rows of `cov_eps`.
    pub fn block_mean(&self) -> Vec<f64> {
        std::iter::once(self.mean_xk).chain(self.mean_y_lk.iter().copied()).collect()
    }
}

pub fn peer_conditional_law(
    coeffs: &BeliefCoefficients,
    y: &ObservationVector,
    k: usize,
) -> Result<ConditionalPeerLaw> {
    check_dim(coeffs, y)?;
    if k >= coeffs.n - 1 {
        return invalid(format!("peer slot {k} out of range for n = {}", coeffs.n));
    }
    let means = coeffs.peer_signal_means(y);
    Ok(ConditionalPeerLaw {
        mean_xk: means[k],
        mean_y_lk: means.iter().enumerate().filter(|&(s, _)| s != k).map(|(_, &m)| m).collect(),
        cov_eps: coeffs.eps_covariance()?,
        var_eps_ik: coeffs.tau2,
    })
}

/// The `V` matrix mapping `y_i` to `(θ̄_i, {E[θ̄_j | y_i]})`.
pub fn build_v(coeffs: &BeliefCoefficients) -> DMatrix<f64> {
    coeffs.v_matrix()
}

/// Peer `k`'s signals written as `θ + Σ coef·noise` over the independent
/// primitive noises, so that they can be conditioned on `y_i` exactly.
///
/// Noise indices: `ξ_j` is `j`; the relay noise `ζ_{j→m}` is `n + j·n + m`.
#[derive(Debug, Clone)]
pub struct PeerBlockModel {
    n: usize,
    sigma2: f64,
    tau2: f64,
    peer: usize,
}

type Form = Vec<(usize, f64)>;

impl PeerBlockModel {
    /// `peer` is a slot, i.e. agent `peer + 1`.
    pub fn new(n: usize, sigma2: f64, tau2: f64, peer: usize) -> Self {
        Self { n, sigma2, tau2, peer }
    }

    fn relay(&self, from: usize, to: usize) -> usize {
        self.n + from * self.n + to
    }

    fn variance(&self, idx: usize) -> f64 {
        if idx < self.n {
            self.sigma2
        } else {
            self.tau2
        }
    }

    fn observed(&self) -> Vec<Form> {
        let mut forms = vec![vec![(0, 1.0)]];
        forms.extend((1..self.n).map(|j| vec![(j, 1.0), (self.relay(j, 0), 1.0)]));
        forms
    }

    /// `(x_k, {y_lk}_{l ∉ {i,k}})`, optionally followed by `y_ik`.
    fn targets(&self, include_ik: bool) -> Vec<Form> {
        let agent = self.peer + 1;
        let mut forms = vec![vec![(agent, 1.0)]];
        forms.extend((1..self.n).filter(|&l| l != agent).map(|l| vec![(l, 1.0), (self.relay(l, agent), 1.0)]));
        if include_ik {
            forms.push(vec![(0, 1.0), (self.relay(0, agent), 1.0)]);
        }
        forms
    }

    fn cross(&self, lhs: &[Form], rhs: &[Form]) -> DMatrix<f64> {
        DMatrix::from_fn(lhs.len(), rhs.len(), |r, c| {
            lhs[r]
                .iter()
                .filter_map(|&(i, ci)| rhs[c].iter().find(|&&(j, _)| j == i).map(|&(_, cj)| ci * cj * self.variance(i)))
                .sum()
        })
    }

    /// Exact conditional law of the target block given the observed values
    /// `obs = (x_i, {y_ji})`.
    pub fn condition(&self, obs: &DVector<f64>, include_ik: bool) -> Result<FlatLocationPosterior> {
        let o = self.observed();
        let t = self.targets(include_ik);
        condition_flat_location(&self.cross(&o, &o), &self.cross(&t, &o), &self.cross(&t, &t), obs)
    }
}
