//! Structural invariants of the recursions, the estimator and the oracles.

mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s3_core::linalg::{dot, norm, packed_len, Matrix};
use s3_core::oracles::{
    convergence_probe, fd_sensitivity, lyapunov_exponents, FdConfig, ProbeConfig,
};
use s3_core::s3::{init_state, run, S3Config, S3State};
use s3_core::stats::stderr_of_means;
use s3_core::{Baker64, Constant, Cos4X2, DiscreteMap, SinCos4X2X3, Solenoid64};

fn cfg(n: usize, seed: u64) -> S3Config {
    S3Config {
        n_steps: n,
        seed,
        ..S3Config::default()
    }
}

/// Checks every per-step invariant along `steps` steps.
fn check_step_invariants<M: DiscreteMap<f64>>(map: &M, seed: u64, steps: usize) {
    let mut st: S3State<f64> = init_state(map, &cfg(steps + 200, seed)).unwrap();
    let m = map.unstable_dim();
    for _ in 0..steps {
        st.step(map).unwrap();
        let frame = st.frame();
        assert!(orthonormality_error(&frame.q) <= 1e-12);
        assert!(frame.r.is_upper_triangular());
        assert!((0..m).all(|i| frame.r[(i, i)] > 0.0));
        assert!(
            frame
                .r
                .matmul(&frame.r_inv)
                .unwrap()
                .max_abs_diff(&Matrix::identity(m))
                <= 1e-12
        );

        let t = st.tangent();
        for i in 0..m {
            assert!(dot(&t.v, frame.q.col(i)).abs() <= 1e-10 * norm(&t.v).max(1.0));
        }
        let b = st.bundle();
        assert_eq!(b.a.cols(), packed_len(m));
        for i in 0..m {
            assert!(b.dr[i].is_upper_triangular());
            let direct: f64 = -(0..m)
                .map(|j| dot(frame.q.col(j), b.a_col(i, j)))
                .sum::<f64>();
            assert!((t.g[i] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            assert!(b.a_col(i, 0) == b.a_col(0, i));
        }
        assert!(t
            .c
            .iter()
            .chain(&t.g)
            .chain(t.b.as_slice())
            .all(|v| v.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn baker_step_invariants(p in prop::array::uniform4(0.0..0.2f64), seed in 0u64..1000) {
        let map = Baker64::new(&p, &[1.0, 1.0, 0.5, -0.5]).unwrap();
        check_step_invariants(&map, seed, 2_000);
    }

    #[test]
    fn solenoid_step_invariants(s in -0.1..0.2f64, seed in 0u64..1000) {
        check_step_invariants(&Solenoid64::at(s), seed, 2_000);
    }

    #[test]
    fn seeded_init_is_reproducible(seed in 0u64..10_000) {
        let map = Solenoid64::at(0.05);
        let a: S3State<f64> = init_state(&map, &cfg(1000, seed)).unwrap();
        let b: S3State<f64> = init_state(&map, &cfg(1000, seed)).unwrap();
        prop_assert_eq!(a.x(), b.x());
        prop_assert_eq!(&a.frame().q, &b.frame().q);
        prop_assert_eq!(&a.bundle().a, &b.bundle().a);
        prop_assert_eq!(&a.tangent().w, &b.tangent().w);
        let c: S3State<f64> = init_state(&map, &cfg(1000, seed + 1)).unwrap();
        prop_assert_ne!(a.x(), c.x());
        prop_assert!(orthonormality_error(&c.frame().q) <= 1e-12);
    }
}

#[test]
fn deterministic_init_zeroes_second_order() {
    let map = Solenoid64::at(0.05);
    let st: S3State<f64> = init_state(
        &map,
        &S3Config {
            deterministic_init: true,
            ..cfg(1000, 4)
        },
    )
    .unwrap();
    assert!(st.bundle().a.as_slice().iter().all(|&v| v == 0.0));
    assert!(st.tangent().w.as_slice().iter().all(|&v| v == 0.0));
    assert!(st.tangent().v.iter().all(|&v| v == 0.0));
}

#[test]
fn long_baker_run_keeps_v_orthogonal() {
    let map = Baker64::new(&[0.1, 0.1, 0.05, 0.05], &[1.0, 1.0, 1.0, 1.0]).unwrap();
    let mut st: S3State<f64> = init_state(&map, &cfg(200_000, 1)).unwrap();
    for _ in 0..100_000 {
        st.step(&map).unwrap();
        let v = &st.tangent().v;
        assert!(dot(v, st.frame().q.col(0)).abs() <= 1e-10 * norm(v).max(1.0));
    }
}

#[test]
fn regularized_tangent_stays_bounded_where_plain_tangent_explodes() {
    // s3 = s4 = 0 keeps the unstable direction exactly on the x1 axis, which
    // would make v trivially zero; a nonzero s3 tilts it.
    let map = Baker64::new(&[0.1, 0.1, 0.05, 0.0], &[1.0, 1.0, 0.0, 0.0]).unwrap();
    let r = run(&map, &Cos4X2, &cfg(1_000_000, 2)).unwrap();
    assert!(
        r.diagnostics.max_v > 0.0 && r.diagnostics.max_v < 1e3,
        "{}",
        r.diagnostics.max_v
    );
    assert!(r.diagnostics.max_w < 1e6 && r.diagnostics.max_a < 1e6);

    let mut x = vec![1.0, 2.0];
    let mut u = vec![0.0; 2];
    let mut growth = 0.0;
    for _ in 0..60 {
        let jac = map.jacobian(&x);
        let chi = map.perturbation(&x);
        u = jac
            .mul_vec(&u)
            .iter()
            .zip(&chi)
            .map(|(a, b)| a + b)
            .collect();
        x = map.apply(&x).unwrap();
        growth = norm(&u);
    }
    assert!(growth > 1e15, "unregularized tangent only reached {growth}");
}

#[test]
fn solenoid_norms_stay_bounded() {
    let r = run(&Solenoid64::at(0.1), &SinCos4X2X3, &cfg(300_000, 5)).unwrap();
    let d = &r.diagnostics;
    assert!(d.max_v < 1e6 && d.max_w < 1e6 && d.max_a < 1e6, "{d:?}");
}

#[test]
fn norm_traces_are_opt_in() {
    let map = Baker64::symmetric(0.1);
    let off = run(&map, &Cos4X2, &cfg(2_000, 1)).unwrap();
    assert!(off.diagnostics.v_trace.is_empty());
    let on = run(
        &map,
        &Cos4X2,
        &S3Config {
            record_norms: true,
            ..cfg(2_000, 1)
        },
    )
    .unwrap();
    assert_eq!(on.diagnostics.a_trace.len(), 2_000);
    assert_eq!(on.total, off.total);
}

#[test]
fn zero_forcing_gives_zero_sensitivity() {
    let map = Solenoid64::new(&[0.1], &[0.0]).unwrap();
    let r = run(&map, &SinCos4X2X3, &cfg(20_000, 9)).unwrap();
    assert_eq!(r.stable, 0.0);
    assert!(r
        .unstable_by_k
        .iter()
        .chain(&r.total_by_k)
        .all(|&v| v == 0.0));
}

#[test]
fn constant_observable_unstable_mean_is_statistically_zero() {
    let map = Baker64::symmetric(0.1);
    let r = run(&map, &Constant(1.0), &cfg(1_000_000, 12)).unwrap();
    assert_eq!(r.stable, 0.0);
    for (k, (&t, &se)) in r.k_grid.iter().zip(r.total_by_k.iter().zip(&r.stderr_by_k)) {
        assert!(t.abs() < 3.0 * se, "K={k}: {t} vs stderr {se}");
    }
}

#[test]
fn centering_keeps_constant_observable_at_zero() {
    let map = Solenoid64::at(0.05);
    let r = run(
        &map,
        &Constant(3.0),
        &S3Config {
            center_observable: true,
            ..cfg(20_000, 1)
        },
    )
    .unwrap();
    assert!(r.total_by_k.iter().all(|&v| v.abs() < 1e-12));
}

/// The solenoid commutes with `x2 -> −x2` for every `s`, and the mixed
/// observable is odd under it, so its average is identically zero in `s`.
#[test]
fn solenoid_reflection_symmetry() {
    let reflect = |x: &[f64]| {
        let y = (std::f64::consts::TAU - x[1]) % std::f64::consts::TAU;
        vec![x[0], y, x[2]]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in [-0.1, 0.05, 0.2] {
        let map = Solenoid64::at(s);
        for _ in 0..100 {
            let x = map.sample_state(&mut rng);
            let lhs = map.apply(&reflect(&x)).unwrap();
            let rhs = reflect(&map.apply(&x).unwrap());
            assert!(max_abs(&wrapped_diff(&lhs, &rhs)) < 1e-12);
            use s3_core::Observable;
            assert!((SinCos4X2X3.eval(&reflect(&x)) + SinCos4X2X3.eval(&x)).abs() < 1e-12);
        }
    }
    let map = Solenoid64::at(0.05);
    let r = run(&map, &SinCos4X2X3, &cfg(1_000_000, 0)).unwrap();
    let k11 = r.total_at(11).unwrap();
    assert!(k11.abs() < 3.0 * r.stderr_at(11).unwrap(), "{k11}");
}

#[test]
fn monte_carlo_error_scales_as_inverse_sqrt_n() {
    let map = Baker64::symmetric(0.1);
    let ns = [10_000usize, 40_000, 160_000];
    let spread: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let totals: Vec<f64> = (0..16)
                .map(|seed| {
                    let c = S3Config {
                        k_grid: vec![11],
                        ..cfg(n, 100 + seed)
                    };
                    run(&map, &Cos4X2, &c).unwrap().total
                })
                .collect();
            stderr_of_means(&totals) * 4.0
        })
        .collect();
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let slope = s3_core::stats::loglog_slope(&x, &spread).unwrap();
    assert!(
        (-0.65..=-0.35).contains(&slope),
        "slope {slope}, spread {spread:?}"
    );
}

#[test]
fn fd_is_self_consistent_under_step_and_sample_changes() {
    let map = Baker64::symmetric(0.1);
    let base = FdConfig {
        n_samples: 20_000_000,
        seed: 3,
        ..FdConfig::default()
    };
    let a = fd_sensitivity(&map, &Cos4X2, &base).unwrap();
    let b = fd_sensitivity(
        &map,
        &Cos4X2,
        &FdConfig {
            delta_s: 0.02,
            n_samples: 10_000_000,
            seed: 4,
            ..base.clone()
        },
    )
    .unwrap();
    let tol = 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    assert!((a.mean - b.mean).abs() < tol, "{a:?} vs {b:?}");
}

#[test]
fn fd_endpoint_swap_is_exact() {
    // Reversing the direction and the sign of the result swaps the endpoints.
    let fwd = Baker64::new(&[0.1, 0.1, 0.0, 0.0], &[1.0, 1.0, 0.0, 0.0]).unwrap();
    let rev = Baker64::new(&[0.1, 0.1, 0.0, 0.0], &[-1.0, -1.0, 0.0, 0.0]).unwrap();
    let c = FdConfig {
        n_samples: 100_000,
        ..FdConfig::default()
    };
    let a = fd_sensitivity(&fwd, &Cos4X2, &c).unwrap();
    let b = fd_sensitivity(&rev, &Cos4X2, &c).unwrap();
    assert_eq!(a.mean, -b.mean);
}

#[test]
fn lyapunov_estimates_are_seed_independent_and_shrink_with_n() {
    let map = Baker64::symmetric(0.1);
    let a = lyapunov_exponents(&map, 200_000, 100, 1).unwrap();
    let b = lyapunov_exponents(&map, 200_000, 100, 2).unwrap();
    let tol = 3.0 * (a[0].stderr.powi(2) + b[0].stderr.powi(2)).sqrt();
    assert!((a[0].mean - b[0].mean).abs() < tol);

    let se = |n: usize| -> f64 {
        let means: Vec<f64> = (0..24)
            .map(|s| lyapunov_exponents(&map, n, 100, 50 + s).unwrap()[0].mean)
            .collect();
        stderr_of_means(&means)
    };
    let ratio = se(80_000) / se(20_000);
    assert!(
        (0.35..0.7).contains(&ratio),
        "quadrupling n gave ratio {ratio}"
    );
}

#[test]
fn probe_differences_decay_monotonically_after_transient() {
    // Baker only: on the solenoid the tangential part of δa is rescaled by
    // a ratio that exceeds one on many steps, so there the fitted slope is
    // the check that applies.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..3 {
        let map = random_baker(&mut rng);
        let rows = convergence_probe(
            &map,
            &ProbeConfig {
                n_steps: 150,
                seed_pair: (1, 2),
                vary_q0: false,
            },
        )
        .unwrap();
        let peak = rows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.da.total_cmp(&b.1.da))
            .unwrap()
            .0;
        let tail: Vec<f64> = rows[peak..]
            .iter()
            .map(|r| r.da)
            .take_while(|&d| d > 1e-280)
            .collect();
        let ups = tail.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(
            ups as f64 <= 0.05 * tail.len() as f64,
            "{ups} increases in {}",
            tail.len()
        );
        assert!(rows.iter().all(|r| r.dq == 0.0));
    }
}

#[test]
fn probe_with_distinct_frames_converges_modulo_sign() {
    let map = Baker64::new(&[0.1, 0.05, 0.1, 0.05], &[1.0, 0.0, 1.0, 0.0]).unwrap();
    let rows = convergence_probe(
        &map,
        &ProbeConfig {
            n_steps: 400,
            seed_pair: (3, 4),
            vary_q0: true,
        },
    )
    .unwrap();
    assert!(rows[0].dq > 0.0);
    let last = rows.last().unwrap();
    assert!(
        last.dq < 1e-12 && last.da < 1e-12 && last.dw < 1e-12 && last.du < 1e-12,
        "{last:?}"
    );
}
