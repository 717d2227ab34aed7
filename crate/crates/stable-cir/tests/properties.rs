//! Cross-module property tests: solver contracts and bandwidth equivariance.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stable_cir::estimator::{
    estimating_function, rate_matrix_a, solve, symmetrized_increments, Regime, SolveOptions,
};
use stable_cir::moment_engine::{Theta, TuningConfig};
use stable_cir::sde_sim::{simulate_path, ModelParams, PathSample, SimScheme};

fn params() -> ModelParams {
    ModelParams {
        a: 2.0,
        b: 0.0,
        sigma_sq: 1.0,
        delta: 1.0,
        alpha: 1.5,
        x0: 1.0,
    }
}

fn sim(n: usize, seed: u64) -> PathSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scheme = SimScheme {
        substeps: 8,
        ..SimScheme::default()
    };
    simulate_path(&params(), 1.0 / n as f64, n, &scheme, &mut rng).unwrap()
}

/// Every converged result satisfies the residual contract
/// |A_n F_n(theta_hat)|_inf < tol.
#[test]
fn converged_results_satisfy_residual_contract() {
    let n = 1 << 12;
    for seed in [1u64, 2, 3] {
        let path = sim(n, seed);
        let tuning = TuningConfig::from_rule(path.delta_n, n, 1.0).unwrap();
        let opts = SolveOptions::default();
        let res = solve(
            Some(Theta::new(1.1, 0.9, 1.45)),
            &path,
            &tuning,
            Regime::FixedWindow,
            &opts,
        )
        .unwrap();
        if res.converged {
            // recompute the scaled residual independently of the solver
            let incr = symmetrized_increments(&path, &tuning).unwrap();
            let f = estimating_function(&res.theta_hat, &incr, &tuning).unwrap();
            let a = rate_matrix_a(&res.theta_hat, &tuning);
            let r = (a[0][0] * f[0])
                .abs()
                .max((a[1][1] * f[1]).abs())
                .max((a[2][2] * f[2]).abs());
            assert!(r < opts.tol, "seed {seed}: residual {r}");
            assert!(res.residual_norm < opts.tol);
        }
    }
}

/// Moving the bandwidth exponent across (0.5, 1] changes theta_hat
/// continuously on fixed data: adjacent estimates on a p-grid stay close,
/// with no jump beyond the local statistical scale.
#[test]
fn bandwidth_equivariance_is_continuous() {
    let n = 1 << 12;
    let path = sim(n, 77);
    let mut previous: Option<Theta> = None;
    let mut max_jump = 0.0f64;
    for k in 0..=8 {
        let p = 0.6 + 0.05 * k as f64;
        let tuning = TuningConfig::from_rule(path.delta_n, n, p).unwrap();
        let res = solve(
            Some(Theta::new(1.0, 1.0, 1.5)),
            &path,
            &tuning,
            Regime::FixedWindow,
            &SolveOptions::default(),
        )
        .unwrap();
        if !res.converged {
            previous = None;
            continue;
        }
        if let Some(prev) = previous {
            let jump = (res.theta_hat.sigma_sq - prev.sigma_sq)
                .abs()
                .max((res.theta_hat.delta - prev.delta).abs())
                .max((res.theta_hat.alpha - prev.alpha).abs());
            max_jump = max_jump.max(jump);
        }
        previous = Some(res.theta_hat);
    }
    assert!(
        previous.is_some(),
        "no converged solve on the upper end of the p grid"
    );
    assert!(max_jump < 0.5, "theta_hat jumped by {max_jump} across adjacent p");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Path CSV round trip is bit exact for arbitrary positive observations.
    #[test]
    fn csv_round_trip_exact(values in proptest::collection::vec(1e-6f64..1e6, 2..40), dn in 1e-6f64..0.5) {
        let path = PathSample {
            n: values.len() - 1,
            observations: values,
            delta_n: dn,
            params_tag: None,
        };
        let back = PathSample::from_csv(&path.to_csv()).unwrap();
        prop_assert_eq!(back.observations, path.observations);
        prop_assert_eq!(back.n, path.n);
    }

    /// Symmetrized increments are invariant under adding a global linear
    /// trend to the observations (second differences annihilate it).
    #[test]
    fn increments_kill_linear_trends(seed in 0u64..1000, slope in -0.5f64..0.5) {
        let n = 64usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scheme = SimScheme { substeps: 2, ..SimScheme::default() };
        let base = simulate_path(&params(), 1.0 / n as f64, n, &scheme, &mut rng).unwrap();
        let tuning = TuningConfig::from_rule(base.delta_n, n, 1.0).unwrap();
        let shifted = PathSample {
            observations: base
                .observations
                .iter()
                .enumerate()
                .map(|(i, &x)| x + 5.0 + slope * i as f64)
                .collect(),
            ..base.clone()
        };
        let a = symmetrized_increments(&base, &tuning).unwrap();
        let b = symmetrized_increments(&shifted, &tuning).unwrap();
        // the numerators agree exactly; only the sqrt(x_base) scaling differs
        for (i, (ra, rb)) in a.rho.iter().zip(&b.rho).enumerate() {
            let na = ra * a.x_base[i].sqrt();
            let nb = rb * b.x_base[i].sqrt();
            prop_assert!((na - nb).abs() < 1e-9 * na.abs().max(1.0));
        }
    }
}
