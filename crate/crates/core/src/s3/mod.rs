//! Space-split sensitivity: `d⟨J⟩/ds` as the sum of a stable part from the
//! regularized tangent and an unstable part integrated by parts against the
//! SRB density gradient along the unstable manifold.

mod accumulator;
mod state;

pub use accumulator::SensitivityAccumulator;
pub use state::{
    random_frame, InitialState, RegularizedTangent, S3State, SecondOrderBundle, UnstableFrame,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{DiscreteMap, Observable};
use crate::linalg::{dot, norm, LinalgError};
use crate::scalar::Real;

/// Truncation grid used when none is configured.
pub const DEFAULT_K_GRID: [usize; 8] = [1, 2, 3, 5, 8, 11, 16, 20];
pub const DEFAULT_WARMUP: usize = 100;
pub const DEFAULT_BATCHES: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum S3Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step {step}: {source}")]
    Linalg {
        step: usize,
        #[source]
        source: LinalgError,
    },
    #[error("step {step}: non-finite value in {what}")]
    NonFinite { step: usize, what: &'static str },
}

impl S3Error {
    /// Numerical failures, as opposed to configuration errors.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Self::Config(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct S3Config {
    /// Trajectory length `N`, warm-up included.
    pub n_steps: usize,
    /// Warm-up `T`: samples before it are discarded.
    pub warmup: usize,
    pub k_grid: Vec<usize>,
    /// Forces the reported truncation instead of the heuristic.
    pub selected_k: Option<usize>,
    /// Start from `a0 = w0 = 0` instead of random values.
    pub deterministic_init: bool,
    /// Subtract the running mean of `J` inside the unstable sums.
    pub center_observable: bool,
    /// Keep per-step norm traces of `v`, `w`, `a`.
    pub record_norms: bool,
    pub batches: usize,
    pub seed: u64,
}

impl Default for S3Config {
    fn default() -> Self {
        Self {
            n_steps: 1_000_000,
            warmup: DEFAULT_WARMUP,
            k_grid: DEFAULT_K_GRID.to_vec(),
            selected_k: None,
            deterministic_init: false,
            center_observable: false,
            record_norms: false,
            batches: DEFAULT_BATCHES,
            seed: 0,
        }
    }
}

impl S3Config {
    pub fn k_max(&self) -> usize {
        self.k_grid.iter().copied().max().unwrap_or(0)
    }

    /// Sorted, deduplicated copy of the grid, with `selected_k` included.
    pub fn normalized_grid(&self) -> Vec<usize> {
        let mut grid = self.k_grid.clone();
        grid.extend(self.selected_k);
        grid.sort_unstable();
        grid.dedup();
        grid
    }

    pub fn validate(&self) -> Result<(), S3Error> {
        if self.k_grid.is_empty() && self.selected_k.is_none() {
            return Err(S3Error::Config("k_grid is empty".into()));
        }
        if self.warmup < 1 {
            return Err(S3Error::Config("warmup must be at least 1".into()));
        }
        let k_max = self.k_max().max(self.selected_k.unwrap_or(0));
        if self.n_steps <= self.warmup + k_max {
            return Err(S3Error::Config(format!(
                "n_steps ({}) must exceed warmup ({}) + max K ({k_max})",
                self.n_steps, self.warmup
            )));
        }
        if self.batches < 2 {
            return Err(S3Error::Config("batches must be at least 2".into()));
        }
        Ok(())
    }

    fn expected_samples(&self) -> usize {
        self.n_steps - self.warmup
    }
}

/// Norm bounds over the run, plus optional per-step traces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics<T> {
    pub max_v: T,
    pub max_w: T,
    pub max_a: T,
    pub v_trace: Vec<T>,
    pub w_trace: Vec<T>,
    pub a_trace: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult<T> {
    pub stable: T,
    pub stable_stderr: T,
    pub k_grid: Vec<usize>,
    pub unstable_by_k: Vec<T>,
    pub total_by_k: Vec<T>,
    pub stderr_by_k: Vec<T>,
    pub selected_k: usize,
    /// `stable + unstable_by_k[selected_k]`.
    pub total: T,
    pub stderr: T,
    pub samples: usize,
    /// Steps completed, warm-up included.
    pub steps: usize,
    pub nudges: u64,
    pub diagnostics: Diagnostics<T>,
}

impl<T: Real> SensitivityResult<T> {
    fn index_of(&self, k: usize) -> Option<usize> {
        self.k_grid.iter().position(|&g| g == k)
    }

    pub fn total_at(&self, k: usize) -> Option<T> {
        self.index_of(k).map(|i| self.total_by_k[i])
    }

    pub fn unstable_at(&self, k: usize) -> Option<T> {
        self.index_of(k).map(|i| self.unstable_by_k[i])
    }

    pub fn stderr_at(&self, k: usize) -> Option<T> {
        self.index_of(k).map(|i| self.stderr_by_k[i])
    }
}

/// A failed run with whatever had been accumulated before the failure.
#[derive(Debug, Clone)]
pub struct RunFailure<T> {
    pub error: S3Error,
    pub partial: Option<Box<SensitivityResult<T>>>,
}

impl<T> From<S3Error> for RunFailure<T> {
    fn from(error: S3Error) -> Self {
        Self {
            error,
            partial: None,
        }
    }
}

impl<T> std::fmt::Display for RunFailure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl<T: std::fmt::Debug> std::error::Error for RunFailure<T> {}

/// Picks the truncation just before the successive differences
/// `|total(K_{i+1}) − total(K_i)|` first grow; the largest `K` if they never do.
pub fn select_truncation<T: Real>(k_grid: &[usize], totals: &[T]) -> usize {
    debug_assert_eq!(k_grid.len(), totals.len());
    let diffs: Vec<T> = totals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    for i in 1..diffs.len() {
        if diffs[i] > diffs[i - 1] {
            return k_grid[i];
        }
    }
    k_grid.last().copied().unwrap_or(0)
}

/// Random initial state for `map` seeded from `config.seed`.
///
/// `w0` is zero when the perturbation direction is zero, so that a zero
/// direction gives an exactly zero sensitivity.
pub fn init_state<T: Real, M: DiscreteMap<T> + ?Sized>(
    map: &M,
    config: &S3Config,
) -> Result<S3State<T>, S3Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let w_scale = if map.perturbation_scale() > T::zero() {
        T::one()
    } else {
        T::zero()
    };
    let init = InitialState::random(map, &mut rng, w_scale, config.deterministic_init)?;
    S3State::new(init)
}

/// Runs the full estimator from a seeded random start.
pub fn run<T, M, O>(
    map: &M,
    observable: &O,
    config: &S3Config,
) -> Result<SensitivityResult<T>, RunFailure<T>>
where
    T: Real,
    M: DiscreteMap<T> + ?Sized,
    O: Observable<T> + ?Sized,
{
    config.validate()?;
    let state = init_state(map, config)?;
    run_from(map, observable, config, state)
}

/// Runs the full estimator from a given state.
pub fn run_from<T, M, O>(
    map: &M,
    observable: &O,
    config: &S3Config,
    mut state: S3State<T>,
) -> Result<SensitivityResult<T>, RunFailure<T>>
where
    T: Real,
    M: DiscreteMap<T> + ?Sized,
    O: Observable<T> + ?Sized,
{
    config.validate()?;
    if state.dim() != map.dim() || state.unstable_dim() != map.unstable_dim() {
        return Err(S3Error::Config(format!(
            "state is {}x{}, map is {}x{}",
            state.dim(),
            state.unstable_dim(),
            map.dim(),
            map.unstable_dim()
        ))
        .into());
    }
    let grid = config.normalized_grid();
    let mut acc = SensitivityAccumulator::new(
        &grid,
        config.warmup,
        config.expected_samples(),
        config.batches,
        config.center_observable,
    );
    let mut diag = Diagnostics {
        max_v: T::zero(),
        max_w: T::zero(),
        max_a: T::zero(),
        ..Diagnostics::default()
    };
    let mut dj = vec![T::zero(); map.dim()];

    for k in 0..config.n_steps {
        if acc.is_active(k) {
            let x = state.x();
            observable.gradient_into(x, &mut dj);
            let j = observable.eval(x);
            acc.accumulate(k, j, dot(&dj, &state.tangent().v));
        }
        match state.step(map) {
            Ok(u) => acc.push_integrand(u),
            Err(error) => {
                let partial = (acc.samples() > 0)
                    .then(|| Box::new(finish(config, &grid, &acc, &state, k, diag.clone())));
                return Err(RunFailure { error, partial });
            }
        }
        let t = state.tangent();
        let nv = norm(&t.v);
        let nw = t.w.frobenius_norm();
        let na = state.bundle().a.frobenius_norm();
        diag.max_v = diag.max_v.max(nv);
        diag.max_w = diag.max_w.max(nw);
        diag.max_a = diag.max_a.max(na);
        if config.record_norms {
            diag.v_trace.push(nv);
            diag.w_trace.push(nw);
            diag.a_trace.push(na);
        }
    }
    Ok(finish(config, &grid, &acc, &state, config.n_steps, diag))
}

fn finish<T: Real>(
    config: &S3Config,
    grid: &[usize],
    acc: &SensitivityAccumulator<T>,
    state: &S3State<T>,
    steps: usize,
    diagnostics: Diagnostics<T>,
) -> SensitivityResult<T> {
    let stable = acc.stable();
    let totals = acc.totals();
    let total_by_k: Vec<T> = totals.iter().map(|e| e.mean).collect();
    let stderr_by_k: Vec<T> = totals.iter().map(|e| e.stderr).collect();
    let selected_k = config
        .selected_k
        .unwrap_or_else(|| select_truncation(grid, &total_by_k));
    let idx = grid.iter().position(|&g| g == selected_k).unwrap_or(0);
    SensitivityResult {
        stable: stable.mean,
        stable_stderr: stable.stderr,
        k_grid: grid.to_vec(),
        unstable_by_k: acc.unstable_means(),
        total: total_by_k[idx],
        stderr: stderr_by_k[idx],
        total_by_k,
        stderr_by_k,
        selected_k,
        samples: acc.samples(),
        steps,
        nudges: state.nudges(),
        diagnostics,
    }
}
