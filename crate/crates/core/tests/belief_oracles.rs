#![allow(clippy::needless_range_loop)]

mod common;

use common::{generative_peer_draw, grid_bayes_posterior, log_uniform, rng, Moments};
use gglab::belief::{
    build_v, compute_coefficients, fuse_gaussian_observations, peer_conditional_law, posterior_theta, GameParams,
    ObservationVector,
};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn fusion_matches_grid_bayes() {
    let mut r = rng(11);
    for _ in 0..20 {
        let m = r.random_range(1..6);
        let obs: Vec<(f64, f64)> =
            (0..m).map(|_| (r.random_range(-20.0..20.0), log_uniform(&mut r, 0.01, 100.0))).collect();
        let (mean, var) = fuse_gaussian_observations(&obs).unwrap();
        let (gm, gv) = grid_bayes_posterior(&obs, 20_001);
        assert!((mean - gm).abs() < 1e-6, "{obs:?}: {mean} vs {gm}");
        assert!((var - gv).abs() < 1e-6 * var.max(1.0), "{obs:?}: {var} vs {gv}");
    }
}

#[test]
fn conditional_law_matches_generative_model() {
    for (n, s2, t2) in [(2, 1.0, 9.0), (3, 0.5, 2.0), (4, 2.0, 1.0)] {
        let params = GameParams::new(n, s2, t2).unwrap();
        let c = compute_coefficients(&params).unwrap();
        let mut r = rng(n as u64);
        let shared: Vec<f64> = (0..n - 1).map(|_| r.random_range(-3.0..3.0)).collect();
        let y = ObservationVector::new(r.random_range(-3.0..3.0), shared).unwrap();
        for k in 0..n - 1 {
            let law = peer_conditional_law(&c, &y, k).unwrap();
            let mut draws = rng(100 + k as u64);
            let m = Moments::of((0..200_000).map(|_| generative_peer_draw(&params, &y, k, &mut draws)));
            let mut mean = law.block_mean();
            mean.push(y.x());
            let block = n - 1;
            for i in 0..n {
                assert!((m.mean[i] - mean[i]).abs() < 4.0 * m.mean_se(i), "n={n} k={k} mean[{i}]");
                for j in 0..n {
                    let expected = match (i < block, j < block) {
                        (true, true) => law.cov_eps[(i, j)],
                        (false, false) => law.var_eps_ik,
                        _ => 0.0,
                    };
                    assert!((m.cov[i][j] - expected).abs() < 4.0 * m.cov_se(i, j), "n={n} k={k} cov[{i}][{j}]");
                }
            }
        }
    }
}

#[test]
fn v_maps_observations_to_expected_posterior_means() {
    let params = GameParams::new(3, 1.0, 2.0).unwrap();
    let c = compute_coefficients(&params).unwrap();
    let y = ObservationVector::new(0.7, vec![-1.0, 2.5]).unwrap();
    let image = build_v(&c) * nalgebra::DVector::from_vec(y.to_vec());
    assert!((image[0] - posterior_theta(&c, &y).unwrap().0).abs() < 1e-12);
    // E[θ̄_j | y_i] with θ̄_j = a x_j + b (sum of what j hears)
    let mut r = rng(5);
    for k in 0..2 {
        let samples = 200_000;
        let mut draws: Vec<f64> = Vec::with_capacity(samples);
        for _ in 0..samples {
            let d = generative_peer_draw(&params, &y, k, &mut r);
            draws.push(c.a_n * d[0] + c.b_n * d[1..].iter().sum::<f64>());
        }
        let mean = draws.iter().sum::<f64>() / samples as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        assert!((image[k + 1] - mean).abs() < 4.0 * (var / samples as f64).sqrt(), "peer {k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn coefficient_identities(n in 2usize..9, ls in -4.6f64..4.6, lt in -4.6f64..4.6) {
        let c = compute_coefficients(&GameParams::new(n, ls.exp(), lt.exp()).unwrap()).unwrap();
        prop_assert!((c.a_n + (n - 1) as f64 * c.b_n - 1.0).abs() < 1e-12);
        prop_assert!((c.c_n + c.d_n - 1.0).abs() < 1e-12);
        prop_assert!(c.a_n > 0.0 && c.b_n > 0.0);
    }

    #[test]
    fn fusion_is_order_free(mut obs in prop::collection::vec((-50.0f64..50.0, 0.01f64..100.0), 1..8)) {
        let forward = fuse_gaussian_observations(&obs).unwrap();
        obs.reverse();
        prop_assert_eq!(forward, fuse_gaussian_observations(&obs).unwrap());
    }
}
