//! Sensitivities of long-time averages in chaotic discrete maps via the
//! space-split decomposition.
//!
//! Every numerical type is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the common `f64` case.
//!
//! ```
//! use s3_core::{run, Baker64, Cos4X2, S3Config};
//!
//! let cfg = S3Config { n_steps: 10_000, seed: 1, ..S3Config::default() };
//! let result = run(&Baker64::symmetric(0.1), &Cos4X2, &cfg).unwrap();
//! assert!(result.total.is_finite());
//! ```

pub mod dynamics;
pub mod linalg;
pub mod oracles;
pub mod s3;
pub mod scalar;
pub mod stats;

pub use dynamics::{
    Baker, BuiltinMap, BuiltinObservable, Constant, Cos4X2, DiscreteMap, DynamicsError, Observable,
    SinCos4X2X3, Solenoid,
};
pub use linalg::{LinalgError, Matrix, QrPair};
pub use oracles::{
    convergence_probe, fd_sensitivity, lyapunov_exponents, FdConfig, ProbeConfig, ProbeRow,
};
pub use s3::{
    init_state, run, run_from, select_truncation, RunFailure, S3Config, S3Error, S3State,
    SensitivityResult, DEFAULT_K_GRID,
};
pub use scalar::Real;
pub use stats::Estimate;

pub type Matrix64 = Matrix<f64>;
pub type S3State64 = S3State<f64>;
pub type SensitivityResult64 = SensitivityResult<f64>;
pub type Estimate64 = Estimate<f64>;
pub type BuiltinMap64 = BuiltinMap<f64>;
pub type ProbeRow64 = ProbeRow<f64>;
pub type Baker64 = Baker<f64>;
pub type Solenoid64 = Solenoid<f64>;
