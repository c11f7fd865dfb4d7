//! Reference computations that share no code with the sensitivity
//! recursions beyond the map itself: central finite differences of
//! long-time averages, Lyapunov exponents from the frame recursion alone,
//! and lockstep replicas for the convergence of the auxiliary recursions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{advance_primal, DiscreteMap, Observable};
use crate::linalg::{dot, packed_len, qr_positive_into, sym_index, Matrix};
use crate::s3::{InitialState, S3Error, S3State, DEFAULT_BATCHES};
use crate::scalar::Real;
use crate::stats::{BatchMeans, Estimate};

#[derive(Debug, Clone, PartialEq)]
pub struct FdConfig {
    pub delta_s: f64,
    /// Samples averaged at each endpoint, summed over chains.
    pub n_samples: usize,
    /// Steps discarded at the start of every chain.
    pub warmup: usize,
    pub seed: u64,
    /// Independent trajectories the samples are split across; they run in parallel.
    pub chains: usize,
    pub batches: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            delta_s: 0.01,
            n_samples: 100_000_000,
            warmup: 100,
            seed: 0,
            chains: 1,
            batches: DEFAULT_BATCHES,
        }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<(), S3Error> {
        if !(self.delta_s > 0.0 && self.delta_s.is_finite()) {
            return Err(S3Error::Config(format!(
                "delta_s must be positive, got {}",
                self.delta_s
            )));
        }
        if self.n_samples <= self.warmup {
            return Err(S3Error::Config(format!(
                "n_samples ({}) must exceed warmup ({})",
                self.n_samples, self.warmup
            )));
        }
        if self.chains == 0 || self.chains > self.n_samples {
            return Err(S3Error::Config(format!(
                "chains must be in 1..=n_samples, got {}",
                self.chains
            )));
        }
        if self.batches < 2 || !self.batches.is_multiple_of(self.chains) {
            return Err(S3Error::Config(format!(
                "batches ({}) must be at least 2 and a multiple of chains ({})",
                self.batches, self.chains
            )));
        }
        Ok(())
    }
}

/// `(⟨J⟩(s + δs) − ⟨J⟩(s − δs)) / 2δs`.
///
/// Both endpoints start every chain from the same initial state. The error
/// comes from batch means of the per-sample difference quotient, which keeps
/// any correlation between the endpoint trajectories in the estimate.
pub fn fd_sensitivity<T, M, O>(
    map: &M,
    observable: &O,
    cfg: &FdConfig,
) -> Result<Estimate<T>, S3Error>
where
    T: Real,
    M: DiscreteMap<T>,
    O: Observable<T> + ?Sized,
{
    cfg.validate()?;
    let ds = T::lit(cfg.delta_s);
    let plus = map.shifted(ds);
    let minus = map.shifted(-ds);
    let scale = T::one() / (ds + ds);
    let batch = cfg.n_samples.div_ceil(cfg.batches).max(1);

    let chain_len =
        |c: usize| cfg.n_samples / cfg.chains + usize::from(c < cfg.n_samples % cfg.chains);
    let parts = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64);
            let x0 = map.sample_state(&mut rng);
            let mut xp = x0.clone();
            let mut xm = x0;
            let mut scratch = vec![T::zero(); map.dim()];
            let mut acc = BatchMeans::with_batch_size(batch);
            let primal = |step| S3Error::NonFinite {
                step,
                what: "primal state",
            };
            for k in 0..cfg.warmup + chain_len(c) {
                if k >= cfg.warmup {
                    acc.push((observable.eval(&xp) - observable.eval(&xm)) * scale);
                }
                advance_primal(&plus, &mut xp, &mut scratch).map_err(|_| primal(k))?;
                advance_primal(&minus, &mut xm, &mut scratch).map_err(|_| primal(k))?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, S3Error>>()?;
    Ok(BatchMeans::merge(&parts).estimate())
}

/// Mean of `log R_ii` along one trajectory after `warmup` steps, largest first.
pub fn lyapunov_exponents<T, M>(
    map: &M,
    n_steps: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<Estimate<T>>, S3Error>
where
    T: Real,
    M: DiscreteMap<T> + ?Sized,
{
    if n_steps <= warmup {
        return Err(S3Error::Config(format!(
            "n_steps ({n_steps}) must exceed warmup ({warmup})"
        )));
    }
    let n = map.dim();
    let m = map.unstable_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = map.sample_state(&mut rng);
    let mut q = crate::s3::random_frame::<T>(n, m, &mut rng)?;
    let mut r = Matrix::zeros(m, m);
    let mut jac = Matrix::zeros(n, n);
    let mut s = Matrix::zeros(n, m);
    let mut scratch = vec![T::zero(); n];
    let mut acc = vec![BatchMeans::new(DEFAULT_BATCHES, n_steps - warmup); m];

    for k in 0..n_steps {
        map.nudge_off_discontinuity(&mut x);
        map.jacobian_into(&x, &mut jac);
        jac.matmul_into(&q, &mut s);
        qr_positive_into(&s, &mut q, &mut r)
            .map_err(|source| S3Error::Linalg { step: k, source })?;
        if k >= warmup {
            for (i, a) in acc.iter_mut().enumerate() {
                a.push(r[(i, i)].ln());
            }
        }
        advance_primal(map, &mut x, &mut scratch).map_err(|_| S3Error::NonFinite {
            step: k,
            what: "primal state",
        })?;
    }
    let mut out: Vec<Estimate<T>> = acc.iter().map(BatchMeans::estimate).collect();
    out.sort_by(|a, b| {
        b.mean
            .partial_cmp(&a.mean)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub n_steps: usize,
    /// Seeds of the two replicas. The first also fixes the shared `x0`.
    pub seed_pair: (u64, u64),
    /// Give the second replica its own `Q0` instead of sharing the first one's.
    pub vary_q0: bool,
}

/// Difference norms between the two replicas after `k` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow<T> {
    pub k: usize,
    /// `‖δa‖` over all stored components.
    pub da: T,
    /// `‖δW‖_F`.
    pub dw: T,
    /// `‖δQ‖_F`.
    pub dq: T,
    /// `|δu|` of the unstable integrand; zero at `k = 0`.
    pub du: T,
}

/// Runs two replicas in lockstep on one primal trajectory and records how
/// far apart their recursions are at every step, `k = 0..=n_steps`.
///
/// Columns of `Q` are only determined up to sign by the recursion, so each
/// replica-B column is flipped onto replica A before differencing, and the
/// dependent `a` and `w` columns follow it.
pub fn convergence_probe<T, M>(map: &M, cfg: &ProbeConfig) -> Result<Vec<ProbeRow<T>>, S3Error>
where
    T: Real,
    M: DiscreteMap<T> + ?Sized,
{
    let w_scale = if map.perturbation_scale() > T::zero() {
        T::one()
    } else {
        T::zero()
    };
    let mut rng_a = ChaCha8Rng::seed_from_u64(cfg.seed_pair.0);
    let mut rng_b = ChaCha8Rng::seed_from_u64(cfg.seed_pair.1);
    let init_a = InitialState::random(map, &mut rng_a, w_scale, false)?;
    let mut init_b = InitialState::random(map, &mut rng_b, w_scale, false)?;
    init_b.x0.clone_from(&init_a.x0);
    if !cfg.vary_q0 {
        init_b.q0 = init_a.q0.clone();
    }
    let mut a = S3State::new(init_a)?;
    let mut b = S3State::new(init_b)?;

    let mut rows = Vec::with_capacity(cfg.n_steps + 1);
    rows.push(differences(0, &a, &b, T::zero()));
    for k in 1..=cfg.n_steps {
        let ua = a.step(map)?;
        let ub = b.step(map)?;
        rows.push(differences(k, &a, &b, (ua - ub).abs()));
    }
    Ok(rows)
}

fn differences<T: Real>(k: usize, a: &S3State<T>, b: &S3State<T>, du: T) -> ProbeRow<T> {
    let m = a.unstable_dim();
    let (qa, qb) = (&a.frame().q, &b.frame().q);
    let sign: Vec<T> = (0..m)
        .map(|i| {
            if dot(qa.col(i), qb.col(i)) < T::zero() {
                -T::one()
            } else {
                T::one()
            }
        })
        .collect();
    let sq_diff = |x: &[T], y: &[T], s: T| {
        x.iter()
            .zip(y)
            .map(|(&p, &q)| (p - s * q) * (p - s * q))
            .sum::<T>()
    };

    let mut dq = T::zero();
    let mut dw = T::zero();
    for (i, &sg) in sign.iter().enumerate() {
        dq += sq_diff(qa.col(i), qb.col(i), sg);
        dw += sq_diff(a.tangent().w.col(i), b.tangent().w.col(i), sg);
    }
    let mut da = T::zero();
    for i in 0..m {
        for j in 0..=i {
            let c = sym_index(i, j);
            da += sq_diff(a.bundle().a.col(c), b.bundle().a.col(c), sign[i] * sign[j]);
        }
    }
    debug_assert_eq!(a.bundle().a.cols(), packed_len(m));
    ProbeRow {
        k,
        da: da.sqrt(),
        dw: dw.sqrt(),
        dq: dq.sqrt(),
        du,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Baker, Constant, Cos4X2, Solenoid};

    fn small_fd(n: usize) -> FdConfig {
        FdConfig {
            n_samples: n,
            seed: 1,
            ..FdConfig::default()
        }
    }

    #[test]
    fn fd_zero_direction_is_zero() {
        let map = Baker::new(&[0.1, 0.1, 0.0, 0.0], &[0.0; 4]).unwrap();
        let e = fd_sensitivity(&map, &Cos4X2, &small_fd(10_000)).unwrap();
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn fd_constant_observable_is_zero() {
        let map = Baker::symmetric(0.1);
        let e = fd_sensitivity(&map, &Constant(2.0), &small_fd(10_000)).unwrap();
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn fd_chains_are_deterministic() {
        let map = Baker::symmetric(0.1);
        let cfg = FdConfig {
            chains: 4,
            ..small_fd(40_000)
        };
        let a = fd_sensitivity(&map, &Cos4X2, &cfg).unwrap();
        let b = fd_sensitivity(&map, &Cos4X2, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.stderr > 0.0);
    }

    #[test]
    fn fd_rejects_bad_config() {
        let map = Baker::symmetric(0.1);
        for cfg in [
            FdConfig {
                delta_s: 0.0,
                ..small_fd(1000)
            },
            FdConfig {
                warmup: 1000,
                ..small_fd(1000)
            },
            FdConfig {
                chains: 3,
                ..small_fd(1000)
            },
        ] {
            assert!(matches!(
                fd_sensitivity(&map, &Cos4X2, &cfg),
                Err(S3Error::Config(_))
            ));
        }
    }

    #[test]
    fn lyapunov_descending_and_close_at_zero_coupling() {
        let le = lyapunov_exponents(&Solenoid::at(0.0), 20_000, 100, 4).unwrap();
        assert!(le[0].mean >= le[1].mean);
        assert!((le[0].mean - 3f64.ln()).abs() < 1e-3);
        assert!((le[1].mean - 2f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn identical_replicas_do_not_separate() {
        let map = Solenoid::at(0.1);
        for vary_q0 in [false, true] {
            let rows = convergence_probe(
                &map,
                &ProbeConfig {
                    n_steps: 50,
                    seed_pair: (7, 7),
                    vary_q0,
                },
            )
            .unwrap();
            assert_eq!(rows.len(), 51);
            assert!(rows
                .iter()
                .all(|r| r.da == 0.0 && r.dw == 0.0 && r.dq == 0.0 && r.du == 0.0));
        }
    }
}
