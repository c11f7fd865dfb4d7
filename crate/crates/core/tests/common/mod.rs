#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s3_core::linalg::Matrix;
use s3_core::{Baker64, DiscreteMap, Observable, Solenoid64};

/// Difference of two states with angular jumps folded into `(−π, π]`.
pub fn wrapped_diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| {
            let mut d = (p - q) % TAU;
            if d > PI {
                d -= TAU;
            } else if d <= -PI {
                d += TAU;
            }
            d
        })
        .collect()
}

fn shift(x: &[f64], dir: &[f64], h: f64) -> Vec<f64> {
    x.iter().zip(dir).map(|(&a, &d)| a + h * d).collect()
}

/// States reached after a burn-in from random starts, kept at least `margin`
/// away from the baker's floor/wrap lines in `x1` (irrelevant for maps
/// without them).
pub fn attractor_points<M: DiscreteMap<f64>>(
    map: &M,
    count: usize,
    seed: u64,
    margin: f64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut x = map.sample_state(&mut rng);
        for _ in 0..50 + rng.random_range(0..50) {
            x = map.apply(&x).unwrap();
        }
        let d = [x[0], (x[0] - PI).abs(), TAU - x[0]];
        if map.dim() != 2 || d.iter().all(|&v| v > margin) {
            out.push(x);
        }
    }
    out
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

/// Largest error of each analytic callback against a finite-difference
/// evaluation, scaled by `max(1, |analytic|)`.
#[derive(Debug, Default, Clone, Copy)]
pub struct DerivativeErrors {
    pub jacobian: f64,
    pub hessian: f64,
    pub hessian_asymmetry: f64,
    pub perturbation: f64,
    pub perturbation_jacobian: f64,
}

impl DerivativeErrors {
    pub fn within_tolerance(&self) -> bool {
        self.jacobian < 1e-6
            && self.hessian < 1e-4
            && self.hessian_asymmetry == 0.0
            && self.perturbation < 1e-6
            && self.perturbation_jacobian < 1e-6
    }
}

fn scaled_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(1.0)
}

pub fn derivative_errors<M: DiscreteMap<f64>>(
    map: &M,
    points: &[Vec<f64>],
    seed: u64,
) -> DerivativeErrors {
    let n = map.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = DerivativeErrors::default();
    let h1 = 1e-6;
    let h2 = 1e-4;
    let plus = map.shifted(h1);
    let minus = map.shifted(-h1);

    for x in points {
        let jac = map.jacobian(x);
        for j in 0..n {
            let mut dir = vec![0.0; n];
            dir[j] = 1.0;
            let d = wrapped_diff(
                &map.apply(&shift(x, &dir, h1)).unwrap(),
                &map.apply(&shift(x, &dir, -h1)).unwrap(),
            );
            for i in 0..n {
                e.jacobian = e.jacobian.max(scaled_err(jac[(i, j)], d[i] / (2.0 * h1)));
            }
        }

        let a = random_vec(&mut rng, n);
        let b = random_vec(&mut rng, n);
        let hab = map.hessian_contract(x, &a, &b);
        let hba = map.hessian_contract(x, &b, &a);
        e.hessian_asymmetry = e.hessian_asymmetry.max(max_abs(&wrapped_diff(&hab, &hba)));
        let f = |sa: f64, sb: f64| {
            let p: Vec<f64> = (0..n)
                .map(|i| x[i] + sa * h2 * a[i] + sb * h2 * b[i])
                .collect();
            map.apply(&p).unwrap()
        };
        let d1 = wrapped_diff(&f(1.0, 1.0), &f(1.0, -1.0));
        let d2 = wrapped_diff(&f(-1.0, 1.0), &f(-1.0, -1.0));
        for i in 0..n {
            let fd = (d1[i] - d2[i]) / (4.0 * h2 * h2);
            e.hessian = e.hessian.max(scaled_err(hab[i], fd));
        }

        let chi = map.perturbation(x);
        let d = wrapped_diff(&plus.apply(x).unwrap(), &minus.apply(x).unwrap());
        for i in 0..n {
            e.perturbation = e.perturbation.max(scaled_err(chi[i], d[i] / (2.0 * h1)));
        }

        let pj = map.perturbation_jacobian(x);
        for j in 0..n {
            let mut dir = vec![0.0; n];
            dir[j] = 1.0;
            let cp = map.perturbation(&shift(x, &dir, h1));
            let cm = map.perturbation(&shift(x, &dir, -h1));
            for i in 0..n {
                e.perturbation_jacobian = e
                    .perturbation_jacobian
                    .max(scaled_err(pj[(i, j)], (cp[i] - cm[i]) / (2.0 * h1)));
            }
        }
    }
    e
}

/// Largest relative gradient error of an observable, central differences with step 1e-5.
pub fn gradient_error<O: Observable<f64>>(obs: &O, points: &[Vec<f64>]) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for x in points {
        let g = obs.gradient(x);
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (obs.eval(&xp) - obs.eval(&xm)) / (2.0 * h);
            worst = worst.max((g[j] - fd).abs() / g[j].abs().max(1.0));
        }
    }
    worst
}

/// Baker with random parameters in `[0, 0.2]` and a random direction.
pub fn random_baker(rng: &mut ChaCha8Rng) -> Baker64 {
    let p: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..0.2)).collect();
    let d: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    Baker64::new(&p, &d).unwrap()
}

pub fn random_solenoid(rng: &mut ChaCha8Rng) -> Solenoid64 {
    Solenoid64::new(
        &[rng.random_range(0.0..0.2)],
        &[rng.random_range(-1.0..1.0)],
    )
    .unwrap()
}

pub fn orthonormality_error(q: &Matrix<f64>) -> f64 {
    q.transpose()
        .matmul(q)
        .unwrap()
        .max_abs_diff(&Matrix::identity(q.cols()))
}

pub fn rel_err(a: f64, reference: f64) -> f64 {
    (a - reference).abs() / reference.abs()
}
