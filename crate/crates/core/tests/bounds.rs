// SPDX-License-Identifier: Apache-2.0

use approx::assert_relative_eq;
use asyncrl_core::bounds::*;
use asyncrl_core::BoundInputs;
use proptest::prelude::*;

#[test]
fn completion_time_examples() {
    // 256/16 * 10 + 50
    assert_relative_eq!(completion_time_bound(256, 16, 10.0, 50.0).unwrap(), 210.0);
    // Q = K, mu = L: bound 2L, a constant-latency schedule takes L.
    assert_relative_eq!(completion_time_bound(8, 8, 7.0, 7.0).unwrap(), 14.0);
    assert_relative_eq!(completion_time_bound(1, 1, 3.0, 3.0).unwrap(), 6.0);
    assert!(completion_time_bound(1, 0, 3.0, 3.0).is_err());
}

#[test]
fn per_sample_examples() {
    let (s, a): (f64, f64) = per_sample_bounds(256, 16, 10.0, 50.0, 2.0).unwrap();
    // 0.625 + 50/256 and 0.625 + 50/768
    assert_relative_eq!(s, 0.625 + 0.195_312_5, epsilon = 1e-12);
    assert_relative_eq!(a, 0.625 + 0.065_104_166_666_666_67, epsilon = 1e-12);
    assert!((s - 0.8203).abs() < 5e-5 && (a - 0.6901).abs() < 5e-5);

    let (s0, a0) = per_sample_bounds(256, 16, 10.0, 50.0, 0.0).unwrap();
    assert_eq!(s0, a0);
    let (_, far) = per_sample_bounds(256, 16, 10.0, 50.0, 1e12).unwrap();
    assert_relative_eq!(far, 0.625, epsilon = 1e-9);
}

#[test]
fn end_to_end_examples() {
    // 8 * 12 + 50
    assert_relative_eq!(sync_end2end_bound(256, 32, 10.0, 50.0, 2.0, 1.0).unwrap(), 146.0);
    assert_relative_eq!(
        sync_end2end_bound(256, 32, 10.0, 50.0, 2.0, 0.0).unwrap(),
        completion_time_bound(256, 32, 10.0, 50.0).unwrap()
    );
    assert_relative_eq!(sync_end2end_bound(256, 32, 10.0, 0.0, 2.0, 1.0).unwrap(), 96.0);

    // 512 / (2560 + 1600/3 + 512)
    let b: f64 = optimal_beta(256, 32, 2.0, 10.0, 50.0, 2.0, 1.0).unwrap();
    assert_relative_eq!(b, 512.0 / (2560.0 + 1600.0 / 3.0 + 512.0), max_relative = 1e-14);
    assert!((b - 0.14201).abs() < 5e-6);
    let (g, t): (f64, f64) = async_terms(256, 32, b, 2.0, 10.0, 50.0, 2.0, 1.0).unwrap();
    assert_relative_eq!(g, t, max_relative = 1e-12);
    // (N/K)(mu_g + E mu_t) + L/(alpha+1)
    assert_relative_eq!(g, 96.0 + 50.0 / 3.0, max_relative = 1e-12);
    assert!((g - 112.667).abs() < 1e-3);

    assert_eq!(optimal_beta(256, 32, 2.0, 10.0, 50.0, 0.0, 1.0).unwrap(), 0.0);
    assert!(async_end2end_bound(256, 32, 0.0, 2.0, 10.0, 50.0, 2.0, 1.0).is_err());
    assert!(async_end2end_bound(256, 32, 1.0, 2.0, 10.0, 50.0, 2.0, 1.0).is_err());
    let tiny = async_end2end_bound(256, 32, 1e-9, 2.0, 10.0, 50.0, 2.0, 1.0).unwrap();
    assert!(tiny > 1e9);
}

#[test]
fn speedup_examples() {
    let (g, e): (f64, f64) = speedup_limits(256, 32, 10.0, 50.0, 2.0, 1.0).unwrap();
    assert_relative_eq!(g, 6.0);
    // 1 + 1600 / 3072
    assert_relative_eq!(e, 1.0 + 1600.0 / 3072.0, max_relative = 1e-14);
    assert!((e - 1.5208).abs() < 5e-5);
    assert_eq!(speedup_limits(256, 32, 10.0, 0.0, 2.0, 1.0).unwrap(), (1.0, 1.0));
    assert!(speedup_limits(256, 32, 0.0, 5.0, 2.0, 1.0).is_err());
}

#[test]
fn report_matches_free_functions() {
    let inputs = BoundInputs {
        q: 256,
        n: 256,
        k: 32,
        mu_gen: 10.0,
        l_gen: 50.0,
        mu_train: 2.0,
        e: 1.0,
        alpha: 2.0,
        beta: None,
    };
    let r = inputs.report().unwrap();
    assert_relative_eq!(r.completion_time, 130.0);
    assert_relative_eq!(r.sync_end2end, 146.0);
    assert_relative_eq!(r.beta, r.optimal_beta);
    assert_relative_eq!(r.async_end2end, 96.0 + 50.0 / 3.0, max_relative = 1e-12);
    let text = r.to_string();
    for key in ["completion_time=", "per_sample_sync=", "optimal_beta=", "speedup_end2end="] {
        assert!(text.contains(key), "{text}");
    }

    let single = asyncrl_core::BoundInputs32 {
        q: 256,
        n: 256,
        k: 32,
        mu_gen: 10.0,
        l_gen: 50.0,
        mu_train: 2.0,
        e: 1.0,
        alpha: 2.0,
        beta: None,
    };
    let r32 = single.report().unwrap();
    assert!((f64::from(r32.optimal_beta) - r.optimal_beta).abs() < 1e-6);
}

#[test]
fn worker_split_floors_and_clamps() {
    assert_eq!(worker_split(0.4, 40).unwrap(), (16, 24));
    assert_eq!(worker_split(0.119, 20).unwrap(), (2, 18));
    assert_eq!(worker_split(0.01, 10).unwrap(), (1, 9));
    assert_eq!(worker_split(0.99, 10).unwrap(), (9, 1));
    assert!(worker_split(0.5, 1).is_err());
}

/// Brute-force minimiser of the async bound over a fine grid.
fn grid_argmin(n: usize, k: usize, alpha: f64, mg: f64, l: f64, mt: f64, e: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for i in 1..20_000 {
        let b = i as f64 / 20_000.0;
        let v = async_end2end_bound(n, k, b, alpha, mg, l, mt, e).unwrap();
        if v < best.0 {
            best = (v, b);
        }
    }
    best.1
}

proptest! {
    #[test]
    fn beta_star_balances_and_minimises(
        n in 1usize..2048, k in 1usize..256, alpha in 0.0f64..16.0,
        mg in 0.1f64..50.0, extra in 0.0f64..200.0, mt in 0.01f64..20.0, e in 1usize..4,
    ) {
        let l = mg + extra;
        let e = e as f64;
        let b = optimal_beta(n, k, alpha, mg, l, mt, e).unwrap();
        prop_assert!(b > 0.0 && b < 1.0);
        let (g, t) = async_terms(n, k, b, alpha, mg, l, mt, e).unwrap();
        prop_assert!((g - t).abs() <= 1e-9 * g.max(t));
        let at = async_end2end_bound(n, k, b, alpha, mg, l, mt, e).unwrap();
        let grid = grid_argmin(n, k, alpha, mg, l, mt, e);
        let at_grid = async_end2end_bound(n, k, grid, alpha, mg, l, mt, e).unwrap();
        prop_assert!(at <= at_grid * (1.0 + 1e-12));
        // Gap to sync is exactly L/(alpha+1) - L.
        let sync = sync_end2end_bound(n, k, mg, l, mt, e).unwrap();
        prop_assert!(((at - sync) - (l / (alpha + 1.0) - l)).abs() <= 1e-9 * sync);
    }

    #[test]
    fn beta_star_monotone(
        n in 1usize..2048, k in 1usize..256, alpha in 0.0f64..16.0,
        mg in 0.1f64..50.0, l in 0.1f64..200.0, mt in 0.01f64..20.0,
    ) {
        let b = optimal_beta(n, k, alpha, mg, l, mt, 1.0).unwrap();
        let more_train = optimal_beta(n, k, alpha, mg, l, mt * 1.5, 1.0).unwrap();
        let more_alpha = optimal_beta(n, k, alpha + 1.0, mg, l, mt, 1.0).unwrap();
        prop_assert!(more_train > b);
        prop_assert!(more_alpha >= b);
    }
}
