// SPDX-License-Identifier: Apache-2.0

use std::io::Write;

use asyncrl_core::workload::*;
use asyncrl_core::SeedState;
use proptest::prelude::*;

/// Mean of N(mu, sigma^2) restricted to [0, upper], by Simpson's rule on
/// the density. Independent of the closed form used by the library.
fn truncated_mean_numeric(mu: f64, sigma: f64, upper: f64) -> f64 {
    let n = 200_000;
    let h = upper / n as f64;
    let pdf = |x: f64| (-0.5 * ((x - mu) / sigma).powi(2)).exp();
    let (mut mass, mut first) = (0.0, 0.0);
    for i in 0..=n {
        let x = i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        mass += w * pdf(x);
        first += w * x * pdf(x);
    }
    first / mass
}

#[test]
fn truncated_gaussian_mean_matches_quadrature() {
    for &(mu, sigma, upper) in &[(10.0, 10.0, 50.0), (10.0, 5.0, 40.0), (50.0, 5.0, 80.0), (10.0, 1.0, 16.0)] {
        let model = LatencyModel::gaussian(mu, sigma, upper);
        let oracle = truncated_mean_numeric(mu, sigma, upper);
        assert!((model.effective_mean() - oracle).abs() < 1e-6 * oracle, "{mu},{sigma}");
        let mut rng = SeedState::new(1).rng();
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = model.sample(&mut rng);
            assert!((0.0..=upper).contains(&x));
            sum += x;
        }
        let mean = sum / n as f64;
        assert!((mean - oracle).abs() < 0.02 * oracle, "{mean} vs {oracle}");
    }
}

#[test]
fn draws_never_exceed_upper_bound() {
    let models = [
        LatencyModel::gaussian(10.0, 10.0, 50.0),
        LatencyModel::gaussian(0.0, 30.0, 5.0),
        LatencyModel::lognormal_from_median(10.0, 1.5, 250.0),
        LatencyModel::Empirical {
            samples: vec![1.0, 2.0, 400.0],
        },
    ];
    let mut rng = SeedState::new(2).rng();
    for m in &models {
        let upper = m.upper();
        let max = (0..1_000_000).map(|_| m.sample(&mut rng)).fold(0.0, f64::max);
        assert!(max <= upper, "{m:?}: {max} > {upper}");
    }
}

#[test]
fn degenerate_and_invalid_models() {
    let mut rng = SeedState::new(3).rng();
    for _ in 0..100 {
        assert_eq!(LatencyModel::constant(10.0).sample(&mut rng), 10.0);
        assert_eq!(LatencyModel::gaussian(10.0, 0.0, 50.0).sample(&mut rng), 10.0);
    }
    assert!(sample_latency(&LatencyModel::gaussian(10.0, -1.0, 50.0), &mut rng).is_err());
    assert!(sample_latency(&LatencyModel::gaussian(10.0, 1.0, 0.0), &mut rng).is_err());
    assert!(sample_latency(&LatencyModel::Empirical { samples: vec![] }, &mut rng).is_err());
}

#[test]
fn empirical_models_load_from_file() {
    let dir = std::env::temp_dir().join(format!("asyncrl-emp-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("lat.txt");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "# seconds\n1.5\n\n2.5\n40").unwrap();
    let m = LatencyModel::load_empirical(&path).unwrap();
    assert_eq!(m.upper(), 40.0);
    assert!((m.effective_mean() - 44.0 / 3.0).abs() < 1e-12);
    assert!(LatencyModel::load_empirical(dir.join("missing.txt")).is_err());
    assert!(LatencyModel::parse_empirical("1.0\nabc\n").is_err());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn task_construction_examples() {
    let seed = SeedState::new(4);
    let c = LatencyModel::constant(10.0);
    let prompts: Vec<usize> = (0..8).collect();
    assert_eq!(make_tasks(&prompts, 8, 0, &c, &seed).unwrap().len(), 64);
    let one = make_tasks(&[0], 1, 3, &c, &seed).unwrap();
    assert_eq!((one.len(), one[0].replica, one[0].init_version), (1, 0, 3));
    let four = make_tasks(&[0, 1], 2, 0, &c, &seed).unwrap();
    assert!(four.iter().all(|t| t.service_time == 10.0 && t.replica < 2));
    assert!(make_tasks(&[0], 0, 0, &c, &seed).is_err());
}

#[test]
fn env_step_examples() {
    let mut rng = SeedState::new(5).rng();
    let env = EnvProfile::reliable(LatencyModel::constant(10.0), 1);
    let mut st = EpisodeState::default();
    let out = env_step(&env, &mut st, &mut rng).unwrap();
    assert_eq!((out.latency, out.done, out.failed), (10.0, true, false));
    assert!(env_step(&env, &mut st, &mut rng).is_err());

    let stop = EnvProfile {
        fail_stop_prob: 1.0,
        fail_stop_timeout: 300.0,
        ..env.clone()
    };
    let out = env_step(&stop, &mut EpisodeState::default(), &mut rng).unwrap();
    assert_eq!((out.latency, out.done, out.failed), (300.0, false, true));

    let slow = EnvProfile {
        fail_slow_prob: 1.0,
        fail_slow_multiplier: 3.0,
        ..env
    };
    assert_eq!(env_step(&slow, &mut EpisodeState::default(), &mut rng).unwrap().latency, 30.0);
}

#[test]
fn fail_stop_frequency_within_three_standard_errors() {
    let p = 0.07;
    let env = EnvProfile {
        fail_stop_prob: p,
        fail_stop_timeout: 100.0,
        ..EnvProfile::reliable(LatencyModel::gaussian(10.0, 5.0, 40.0), 5)
    };
    let n = 10_000;
    let mut failed = 0;
    for ep in 0..n {
        let mut rng = SeedState::new(6).derive("episode", ep).rng();
        let mut st = EpisodeState::default();
        while !st.is_finished() {
            let out = env_step(&env, &mut st, &mut rng).unwrap();
            if out.failed {
                failed += 1;
            }
        }
    }
    let freq = failed as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((freq - p).abs() <= 3.0 * se, "{freq}");
}

proptest! {
    #[test]
    fn permuting_prompts_permutes_tasks(perm in Just((0..12usize).collect::<Vec<_>>()).prop_shuffle(), n in 1usize..5) {
        let seed = SeedState::new(8);
        let model = LatencyModel::lognormal_from_median(5.0, 1.0, 100.0);
        let base: Vec<usize> = (0..12).collect();
        let key = |ts: Vec<RolloutTask>| {
            let mut v: Vec<(usize, usize, u64)> = ts.iter().map(|t| (t.prompt, t.replica, t.service_time.to_bits())).collect();
            v.sort();
            v
        };
        prop_assert_eq!(
            key(make_tasks(&base, n, 0, &model, &seed).unwrap()),
            key(make_tasks(&perm, n, 0, &model, &seed).unwrap())
        );
    }
}
