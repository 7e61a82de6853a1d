//! The threshold function `h` induced by a fixed-point function `g`.
//!
//! With `k` the slot solved for and `y_{i∖k} = (x_i, {y_ji}_{j≠k})`,
//!
//! ```text
//! g(y_{i∖k}) = a_n x_i + b_n Ih(y_{i∖k}) + b_n Σ_{j≠k} y_ji
//! h(y_i)     = Ih(y_{i∖k}) − y_ki
//! ```
//!
//! and the agent plays risky iff `h(y_i) ≥ 0`.

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefCoefficients, ObservationVector};
use crate::error::{invalid, Result};
use crate::grid::GridFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFunction {
    g: GridFunction,
    coeffs: BeliefCoefficients,
}

impl ThresholdFunction {
    pub fn new(g: GridFunction, coeffs: BeliefCoefficients) -> Result<Self> {
        if g.dim() != coeffs.n - 1 {
            return invalid(format!("g has {} axes but n = {} needs {}", g.dim(), coeffs.n, coeffs.n - 1));
        }
        if coeffs.b_n.is_nan() || coeffs.b_n <= 0.0 {
            return invalid("b_n must be positive");
        }
        Ok(Self { g, coeffs })
    }

    pub fn g(&self) -> &GridFunction {
        &self.g
    }

    pub fn coeffs(&self) -> &BeliefCoefficients {
        &self.coeffs
    }

    pub fn n(&self) -> usize {
        self.coeffs.n
    }

    /// `Ih(y_reduced)` where `y_reduced = (x_i, {y_ji}_{j≠k})`.
    pub fn g_to_ih(&self, y_reduced: &[f64]) -> Result<f64> {
        let g = self.g.eval(y_reduced)?;
        Ok(self.ih_from_g(g, y_reduced))
    }

    pub(crate) fn ih_from_g(&self, g: f64, y_reduced: &[f64]) -> f64 {
        let c = &self.coeffs;
        let rest: f64 = y_reduced[1..].iter().sum();
        (g - c.a_n * y_reduced[0] - c.b_n * rest) / c.b_n
    }

    /// Unchecked `Ih` for hot loops.
    pub(crate) fn ih_unchecked(&self, y_reduced: &[f64]) -> f64 {
        self.ih_from_g(self.g.interpolate(y_reduced), y_reduced)
    }

    /// `h(y) = Ih(y_{i∖k}) − y_ki`.
    pub fn eval_h(&self, y: &ObservationVector, k: usize) -> Result<f64> {
        if y.n() != self.n() {
            return invalid(format!("observation has n = {}, threshold function has n = {}", y.n(), self.n()));
        }
        if k >= y.shared().len() {
            return invalid(format!("peer slot {k} out of range 0..{}", y.shared().len()));
        }
        Ok(self.g_to_ih(&y.reduced(k))? - y.shared()[k])
    }

    /// Risky iff `h ≥ 0`, evaluated on slot 0.
    pub fn plays_risky(&self, y: &ObservationVector) -> Result<bool> {
        Ok(self.eval_h(y, 0)? >= 0.0)
    }

    /// For n = 2: the curve `x ↦ a x + b Ih(x) − 1` at the grid nodes, the
    /// shifted view of `g` used when plotting convergence.
    pub fn presentation_curve(&self) -> Result<Vec<(f64, f64)>> {
        if self.n() != 2 {
            return invalid("the presentation curve is defined for n = 2 only");
        }
        let spec = self.g.spec();
        Ok((0..spec.node_count())
            .map(|i| {
                let x = spec.coordinate(0, i);
                let ih = self.ih_unchecked(&[x]);
                (x, self.coeffs.a_n * x + self.coeffs.b_n * ih - 1.0)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::belief::{compute_coefficients, GameParams};
    use crate::grid::GridSpec;

    fn tf(n: usize, sigma2: f64, tau2: f64, points: usize, f: impl Fn(&[f64]) -> f64) -> ThresholdFunction {
        let coeffs = compute_coefficients(&GameParams::new(n, sigma2, tau2).unwrap()).unwrap();
        let spec = GridSpec::uniform(n - 1, -5.0, 5.0, points).unwrap();
        let g = GridFunction::from_fn(spec, coeffs.a_n, n, f).unwrap();
        ThresholdFunction::new(g, coeffs).unwrap()
    }

    #[test]
    fn constant_one_gives_inverse_b() {
        let t = tf(3, 2.0, 3.0, 5, |_| 1.0);
        let ih = t.g_to_ih(&[0.0, 0.0]).unwrap();
        assert!((ih - 1.0 / t.coeffs().b_n).abs() < 1e-12);
    }

    #[test]
    fn reference_instance_scales_by_eleven() {
        let c = 1.7;
        let t = tf(2, 1.0, 9.0, 11, |_| c);
        let ih = t.g_to_ih(&[0.0]).unwrap();
        assert!((ih - 11.0 * c).abs() < 1e-12);
    }

    #[test]
    fn root_and_slope() {
        let t = tf(3, 1.0, 2.0, 9, |p| 2.0 - 0.1 * p[0].tanh());
        let reduced = [0.3, -0.7];
        let ih = t.g_to_ih(&reduced).unwrap();
        let at_root = ObservationVector::new(0.3, vec![ih, -0.7]).unwrap();
        assert!(t.eval_h(&at_root, 0).unwrap().abs() < 1e-12);
        assert!(t.plays_risky(&at_root).unwrap());
        let above = ObservationVector::new(0.3, vec![ih + 0.25, -0.7]).unwrap();
        assert!((t.eval_h(&above, 0).unwrap() + 0.25).abs() < 1e-12);
        assert!(!t.plays_risky(&above).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = tf(3, 1.0, 2.0, 5, |_| 2.0);
        let y = ObservationVector::new(0.0, vec![0.0, 0.0]).unwrap();
        assert!(t.eval_h(&y, 2).is_err());
        let short = ObservationVector::new(0.0, vec![0.0]).unwrap();
        assert!(t.eval_h(&short, 0).is_err());

        let coeffs = compute_coefficients(&GameParams::new(3, 1.0, 1.0).unwrap()).unwrap();
        let g = GridFunction::constant(GridSpec::uniform(1, 0.0, 1.0, 2).unwrap(), 1.0, 1.0, 3).unwrap();
        assert!(ThresholdFunction::new(g, coeffs).is_err());
    }

    #[test]
    fn presentation_curve_is_g_minus_one() {
        let t = tf(2, 1.0, 9.0, 11, |p| 1.5 + 0.4 * (p[0] / 5.0));
        for (i, (x, v)) in t.presentation_curve().unwrap().into_iter().enumerate() {
            assert_eq!(x, t.g().spec().coordinate(0, i));
            assert!((v - (t.g().values()[i] - 1.0)).abs() < 1e-12);
        }
        assert!(tf(3, 1.0, 9.0, 3, |_| 2.0).presentation_curve().is_err());
    }

    proptest! {
        #[test]
        fn def_g_round_trip(
            n in 2usize..=4,
            values in prop::collection::vec(1.0f64..2.0, 125),
            query in prop::collection::vec(-8.0f64..8.0, 3),
        ) {
            let points: usize = 5;
            let count = points.pow((n - 1) as u32);
            let coeffs = compute_coefficients(&GameParams::new(n, 1.3, 2.1).unwrap()).unwrap();
            let spec = GridSpec::uniform(n - 1, -5.0, 5.0, points).unwrap();
            let g = GridFunction::new(spec, values[..count].to_vec(), coeffs.a_n, n).unwrap();
            let t = ThresholdFunction::new(g.clone(), coeffs.clone()).unwrap();
            let q = &query[..n - 1];
            let ih = t.g_to_ih(q).unwrap();
            let rebuilt = coeffs.a_n * q[0] + coeffs.b_n * ih + coeffs.b_n * q[1..].iter().sum::<f64>();
            prop_assert!((rebuilt - g.eval(q).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn ih_decreases_when_g_is_strictly_flatter(
            slope in 0.0f64..0.9,
            x in -4.0f64..4.0,
            u in -4.0f64..4.0,
            delta in 0.01f64..1.0,
        ) {
            let coeffs = compute_coefficients(&GameParams::new(3, 1.0, 3.0).unwrap()).unwrap();
            let a = coeffs.a_n;
            let spec = GridSpec::uniform(2, -5.0, 5.0, 41).unwrap();
            let g = GridFunction::from_fn(spec, a, 3, |p| 2.0 + 0.1 * slope * a * (p[0] + p[1]))
                .unwrap();
            let t = ThresholdFunction::new(g, coeffs).unwrap();
            let base = t.g_to_ih(&[x, u]).unwrap();
            prop_assert!(t.g_to_ih(&[x + delta, u]).unwrap() < base);
            prop_assert!(t.g_to_ih(&[x, u + delta]).unwrap() < base);
        }
    }
}
