//! Parameterized discrete maps with analytic derivatives, and the scalar
//! observables averaged along their trajectories.
//!
//! A map carries its parameter vector together with a perturbation
//! direction in parameter space; the scalar `s` that sensitivities are taken
//! with respect to moves the parameters along that direction.
//!
//! `mod 2π` and floor terms are piecewise-constant shifts, so they contribute
//! nothing to any derivative.

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("map produced a non-finite state")]
    NonFinite,
    #[error("{what}: expected {expected} values, got {got}")]
    BadLength {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown map `{0}` (expected `baker` or `solenoid`)")]
    UnknownMap(String),
    #[error("unknown observable `{0}`")]
    UnknownObservable(String),
}

/// Distance from a floor/mod discontinuity below which a state is nudged.
pub const DISCONTINUITY_GUARD: f64 = 1e-12;
/// Size of the nudge applied to states inside the guard band.
pub const DISCONTINUITY_NUDGE: f64 = 1e-10;

/// A diffeomorphism `x -> φ(x; s)` together with the derivatives the
/// sensitivity recursions need.
///
/// The `_into` methods write into caller-provided buffers and are what the
/// hot loops call; the allocating wrappers are for tests and one-off use.
pub trait DiscreteMap<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of positive Lyapunov exponents at the configured parameters.
    fn unstable_dim(&self) -> usize;

    fn params(&self) -> &[T];

    fn perturb_dir(&self) -> &[T];

    fn apply_into(&self, x: &[T], out: &mut [T]);

    fn jacobian_into(&self, x: &[T], out: &mut Matrix<T>);

    /// `out_i = ∂p ∂q φ_i a_p b_q`.
    fn hessian_contract_into(&self, x: &[T], a: &[T], b: &[T], out: &mut [T]);

    /// `∂s φ(x)`, the derivative along `perturb_dir` in parameter space.
    fn perturbation_into(&self, x: &[T], out: &mut [T]);

    /// State Jacobian of [`DiscreteMap::perturbation_into`].
    fn perturbation_jacobian_into(&self, x: &[T], out: &mut Matrix<T>);

    /// Draws an initial state uniformly from the map's domain.
    fn sample_state(&self, rng: &mut dyn RngCore) -> Vec<T>;

    /// Same map with parameters moved by `ds * perturb_dir`.
    fn shifted(&self, ds: T) -> Self
    where
        Self: Sized;

    /// Moves `x` off a discontinuity line if it sits inside the guard band.
    /// Returns whether a nudge was applied.
    fn nudge_off_discontinuity(&self, _x: &mut [T]) -> bool {
        false
    }

    /// Euclidean norm of the perturbation direction.
    fn perturbation_scale(&self) -> T {
        self.perturb_dir().iter().map(|&d| d * d).sum::<T>().sqrt()
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>, DynamicsError> {
        let mut out = vec![T::zero(); self.dim()];
        self.apply_into(x, &mut out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(DynamicsError::NonFinite)
        }
    }

    fn jacobian(&self, x: &[T]) -> Matrix<T> {
        let mut out = Matrix::zeros(self.dim(), self.dim());
        self.jacobian_into(x, &mut out);
        out
    }

    fn hessian_contract(&self, x: &[T], a: &[T], b: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.hessian_contract_into(x, a, b, &mut out);
        out
    }

    fn perturbation(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.perturbation_into(x, &mut out);
        out
    }

    fn perturbation_jacobian(&self, x: &[T]) -> Matrix<T> {
        let mut out = Matrix::zeros(self.dim(), self.dim());
        self.perturbation_jacobian_into(x, &mut out);
        out
    }
}

/// Advances `x` in place through `map`, nudging it off discontinuities first.
/// `scratch` must have the map's dimension. Returns whether a nudge happened.
pub fn advance_primal<T: Real, M: DiscreteMap<T> + ?Sized>(
    map: &M,
    x: &mut [T],
    scratch: &mut [T],
) -> Result<bool, DynamicsError> {
    let nudged = map.nudge_off_discontinuity(x);
    map.apply_into(x, scratch);
    if !scratch.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    x.copy_from_slice(scratch);
    Ok(nudged)
}

/// Reduces an angle into `[0, 2π)`.
#[inline]
pub fn wrap_angle<T: Real>(x: T) -> T {
    let two_pi = T::TAU();
    if x >= T::zero() && x < two_pi {
        return x;
    }
    let mut r = x - two_pi * (x / two_pi).floor();
    if r < T::zero() {
        r += two_pi;
    }
    if r >= two_pi {
        r -= two_pi;
    }
    r
}

fn check_len<T>(what: &'static str, v: &[T], expected: usize) -> Result<(), DynamicsError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(DynamicsError::BadLength {
            what,
            expected,
            got: v.len(),
        })
    }
}

/// Perturbed baker's map on `[0, 2π)²` with four parameters `s1..s4`:
///
/// ```text
/// x1' = 2 x1 + s1 sin x1 + s2 sin x1 sin(2 x2)/2                      mod 2π
/// x2' = x2/2 + π⌊x1/π⌋ + s3 sin x1 sin(2 x2)/2 + s4 sin(2 x2)/2       mod 2π
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Baker<T> {
    params: [T; 4],
    dir: [T; 4],
}

impl<T: Real> Baker<T> {
    pub fn new(params: &[T], perturb_dir: &[T]) -> Result<Self, DynamicsError> {
        check_len("baker params", params, 4)?;
        check_len("baker perturb_dir", perturb_dir, 4)?;
        Ok(Self {
            params: [params[0], params[1], params[2], params[3]],
            dir: [
                perturb_dir[0],
                perturb_dir[1],
                perturb_dir[2],
                perturb_dir[3],
            ],
        })
    }

    /// The common experiment setup `s1 = s2 = s`, `s3 = s4 = 0`, perturbed along `(1, 1, 0, 0)`.
    pub fn symmetric(s: T) -> Self {
        let z = T::zero();
        let o = T::one();
        Self {
            params: [s, s, z, z],
            dir: [o, o, z, z],
        }
    }
}

impl<T: Real> DiscreteMap<T> for Baker<T> {
    fn dim(&self) -> usize {
        2
    }

    fn unstable_dim(&self) -> usize {
        1
    }

    fn params(&self) -> &[T] {
        &self.params
    }

    fn perturb_dir(&self) -> &[T] {
        &self.dir
    }

    fn apply_into(&self, x: &[T], out: &mut [T]) {
        let [s1, s2, s3, s4] = self.params;
        let half = T::lit(0.5);
        let pi = T::PI();
        let sx = x[0].sin();
        let s2y = (x[1] + x[1]).sin();
        out[0] = wrap_angle(x[0] + x[0] + s1 * sx + s2 * sx * s2y * half);
        out[1] = wrap_angle(
            x[1] * half + pi * (x[0] / pi).floor() + s3 * sx * s2y * half + s4 * s2y * half,
        );
    }

    fn jacobian_into(&self, x: &[T], out: &mut Matrix<T>) {
        let [s1, s2, s3, s4] = self.params;
        let half = T::lit(0.5);
        let (sx, cx) = x[0].sin_cos();
        let (s2y, c2y) = (x[1] + x[1]).sin_cos();
        out[(0, 0)] = T::lit(2.0) + s1 * cx + s2 * cx * s2y * half;
        out[(0, 1)] = s2 * sx * c2y;
        out[(1, 0)] = s3 * cx * s2y * half;
        out[(1, 1)] = half + s3 * sx * c2y + s4 * c2y;
    }

    fn hessian_contract_into(&self, x: &[T], a: &[T], b: &[T], out: &mut [T]) {
        let [s1, s2, s3, s4] = self.params;
        let half = T::lit(0.5);
        let two = T::lit(2.0);
        let (sx, cx) = x[0].sin_cos();
        let (s2y, c2y) = (x[1] + x[1]).sin_cos();
        let h0_11 = -s1 * sx - s2 * sx * s2y * half;
        let h0_12 = s2 * cx * c2y;
        let h0_22 = -two * s2 * sx * s2y;
        let h1_11 = -s3 * sx * s2y * half;
        let h1_12 = s3 * cx * c2y;
        let h1_22 = -two * (s3 * sx + s4) * s2y;
        // Products formed first so that swapping `a` and `b` is exact.
        let (p00, p11) = (a[0] * b[0], a[1] * b[1]);
        let cross = a[0] * b[1] + a[1] * b[0];
        out[0] = h0_11 * p00 + h0_12 * cross + h0_22 * p11;
        out[1] = h1_11 * p00 + h1_12 * cross + h1_22 * p11;
    }

    fn perturbation_into(&self, x: &[T], out: &mut [T]) {
        let [d1, d2, d3, d4] = self.dir;
        let half = T::lit(0.5);
        let sx = x[0].sin();
        let s2y = (x[1] + x[1]).sin();
        out[0] = d1 * sx + d2 * sx * s2y * half;
        out[1] = d3 * sx * s2y * half + d4 * s2y * half;
    }

    fn perturbation_jacobian_into(&self, x: &[T], out: &mut Matrix<T>) {
        let [d1, d2, d3, d4] = self.dir;
        let half = T::lit(0.5);
        let (sx, cx) = x[0].sin_cos();
        let (s2y, c2y) = (x[1] + x[1]).sin_cos();
        out[(0, 0)] = d1 * cx + d2 * cx * s2y * half;
        out[(0, 1)] = d2 * sx * c2y;
        out[(1, 0)] = d3 * cx * s2y * half;
        out[(1, 1)] = d3 * sx * c2y + d4 * c2y;
    }

    fn sample_state(&self, rng: &mut dyn RngCore) -> Vec<T> {
        let tau = std::f64::consts::TAU;
        (0..2).map(|_| T::lit(rng.random_range(0.0..tau))).collect()
    }

    fn shifted(&self, ds: T) -> Self {
        let mut out = self.clone();
        for (p, &d) in out.params.iter_mut().zip(&self.dir) {
            *p += ds * d;
        }
        out
    }

    fn nudge_off_discontinuity(&self, x: &mut [T]) -> bool {
        let guard = T::lit(DISCONTINUITY_GUARD);
        let near = (x[0] - T::PI()).abs() < guard || x[0] < guard || T::TAU() - x[0] < guard;
        if near {
            x[0] = wrap_angle(x[0] + T::lit(DISCONTINUITY_NUDGE));
        }
        near
    }
}

/// Solenoid-type map on `ℝ × [0, 2π)²` with one parameter `s`:
///
/// ```text
/// x1' = 0.05 x1 + 0.1 cos(8 x2) − 0.1 sin(5 x3)
/// x2' = 2 x2 + s (1 + x1) sin(8 x2)     mod 2π
/// x3' = 3 x3 + s (1 + x1) cos(2 x3)     mod 2π
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Solenoid<T> {
    s: [T; 1],
    dir: [T; 1],
}

impl<T: Real> Solenoid<T> {
    pub fn new(params: &[T], perturb_dir: &[T]) -> Result<Self, DynamicsError> {
        check_len("solenoid params", params, 1)?;
        check_len("solenoid perturb_dir", perturb_dir, 1)?;
        Ok(Self {
            s: [params[0]],
            dir: [perturb_dir[0]],
        })
    }

    /// Parameter `s`, perturbed along the unit direction.
    pub fn at(s: T) -> Self {
        Self {
            s: [s],
            dir: [T::one()],
        }
    }
}

/// Half-width of the interval initial `x1` values are drawn from; it covers
/// the attracting band `|x1| <= 0.2 / 0.95`.
const SOLENOID_X1_HALF_WIDTH: f64 = 0.25;

impl<T: Real> DiscreteMap<T> for Solenoid<T> {
    fn dim(&self) -> usize {
        3
    }

    fn unstable_dim(&self) -> usize {
        2
    }

    fn params(&self) -> &[T] {
        &self.s
    }

    fn perturb_dir(&self) -> &[T] {
        &self.dir
    }

    fn apply_into(&self, x: &[T], out: &mut [T]) {
        let s = self.s[0];
        let amp = s * (T::one() + x[0]);
        out[0] = T::lit(0.05) * x[0] + T::lit(0.1) * (T::lit(8.0) * x[1]).cos()
            - T::lit(0.1) * (T::lit(5.0) * x[2]).sin();
        out[1] = wrap_angle(T::lit(2.0) * x[1] + amp * (T::lit(8.0) * x[1]).sin());
        out[2] = wrap_angle(T::lit(3.0) * x[2] + amp * (T::lit(2.0) * x[2]).cos());
    }

    fn jacobian_into(&self, x: &[T], out: &mut Matrix<T>) {
        let s = self.s[0];
        let one_x = T::one() + x[0];
        let (s8, c8) = (T::lit(8.0) * x[1]).sin_cos();
        let (s2, c2) = (T::lit(2.0) * x[2]).sin_cos();
        let c5 = (T::lit(5.0) * x[2]).cos();
        out[(0, 0)] = T::lit(0.05);
        out[(0, 1)] = -T::lit(0.8) * s8;
        out[(0, 2)] = -T::lit(0.5) * c5;
        out[(1, 0)] = s * s8;
        out[(1, 1)] = T::lit(2.0) + T::lit(8.0) * s * one_x * c8;
        out[(1, 2)] = T::zero();
        out[(2, 0)] = s * c2;
        out[(2, 1)] = T::zero();
        out[(2, 2)] = T::lit(3.0) - T::lit(2.0) * s * one_x * s2;
    }

    fn hessian_contract_into(&self, x: &[T], a: &[T], b: &[T], out: &mut [T]) {
        let s = self.s[0];
        let one_x = T::one() + x[0];
        let (s8, c8) = (T::lit(8.0) * x[1]).sin_cos();
        let (s2, c2) = (T::lit(2.0) * x[2]).sin_cos();
        let s5 = (T::lit(5.0) * x[2]).sin();
        let (p11, p22) = (a[1] * b[1], a[2] * b[2]);
        out[0] = -T::lit(6.4) * c8 * p11 + T::lit(2.5) * s5 * p22;
        out[1] = T::lit(8.0) * s * c8 * (a[0] * b[1] + a[1] * b[0])
            - T::lit(64.0) * s * one_x * s8 * p11;
        out[2] = -T::lit(2.0) * s * s2 * (a[0] * b[2] + a[2] * b[0])
            - T::lit(4.0) * s * one_x * c2 * p22;
    }

    fn perturbation_into(&self, x: &[T], out: &mut [T]) {
        let d = self.dir[0];
        let one_x = T::one() + x[0];
        out[0] = T::zero();
        out[1] = d * one_x * (T::lit(8.0) * x[1]).sin();
        out[2] = d * one_x * (T::lit(2.0) * x[2]).cos();
    }

    fn perturbation_jacobian_into(&self, x: &[T], out: &mut Matrix<T>) {
        let d = self.dir[0];
        let one_x = T::one() + x[0];
        let (s8, c8) = (T::lit(8.0) * x[1]).sin_cos();
        let (s2, c2) = (T::lit(2.0) * x[2]).sin_cos();
        out.fill(T::zero());
        out[(1, 0)] = d * s8;
        out[(1, 1)] = d * T::lit(8.0) * one_x * c8;
        out[(2, 0)] = d * c2;
        out[(2, 2)] = -d * T::lit(2.0) * one_x * s2;
    }

    fn sample_state(&self, rng: &mut dyn RngCore) -> Vec<T> {
        let tau = std::f64::consts::TAU;
        let w = SOLENOID_X1_HALF_WIDTH;
        vec![
            T::lit(rng.random_range(-w..w)),
            T::lit(rng.random_range(0.0..tau)),
            T::lit(rng.random_range(0.0..tau)),
        ]
    }

    fn shifted(&self, ds: T) -> Self {
        Self {
            s: [self.s[0] + ds * self.dir[0]],
            dir: self.dir,
        }
    }
}

/// The built-in maps, selectable by name.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinMap<T> {
    Baker(Baker<T>),
    Solenoid(Solenoid<T>),
}

impl<T: Real> BuiltinMap<T> {
    pub const NAMES: [&'static str; 2] = ["baker", "solenoid"];

    pub fn from_name(name: &str, params: &[T], perturb_dir: &[T]) -> Result<Self, DynamicsError> {
        match name {
            "baker" => Baker::new(params, perturb_dir).map(Self::Baker),
            "solenoid" => Solenoid::new(params, perturb_dir).map(Self::Solenoid),
            other => Err(DynamicsError::UnknownMap(other.to_string())),
        }
    }

    /// Number of parameters the named map takes.
    pub fn param_count(name: &str) -> Option<usize> {
        match name {
            "baker" => Some(4),
            "solenoid" => Some(1),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Baker(_) => "baker",
            Self::Solenoid(_) => "solenoid",
        }
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            BuiltinMap::Baker($m) => $e,
            BuiltinMap::Solenoid($m) => $e,
        }
    };
}

impl<T: Real> DiscreteMap<T> for BuiltinMap<T> {
    fn dim(&self) -> usize {
        delegate!(self, m => m.dim())
    }
    fn unstable_dim(&self) -> usize {
        delegate!(self, m => m.unstable_dim())
    }
    fn params(&self) -> &[T] {
        delegate!(self, m => m.params())
    }
    fn perturb_dir(&self) -> &[T] {
        delegate!(self, m => m.perturb_dir())
    }
    fn apply_into(&self, x: &[T], out: &mut [T]) {
        delegate!(self, m => m.apply_into(x, out))
    }
    fn jacobian_into(&self, x: &[T], out: &mut Matrix<T>) {
        delegate!(self, m => m.jacobian_into(x, out))
    }
    fn hessian_contract_into(&self, x: &[T], a: &[T], b: &[T], out: &mut [T]) {
        delegate!(self, m => m.hessian_contract_into(x, a, b, out))
    }
    fn perturbation_into(&self, x: &[T], out: &mut [T]) {
        delegate!(self, m => m.perturbation_into(x, out))
    }
    fn perturbation_jacobian_into(&self, x: &[T], out: &mut Matrix<T>) {
        delegate!(self, m => m.perturbation_jacobian_into(x, out))
    }
    fn sample_state(&self, rng: &mut dyn RngCore) -> Vec<T> {
        delegate!(self, m => m.sample_state(rng))
    }
    fn shifted(&self, ds: T) -> Self {
        match self {
            Self::Baker(m) => Self::Baker(m.shifted(ds)),
            Self::Solenoid(m) => Self::Solenoid(m.shifted(ds)),
        }
    }
    fn nudge_off_discontinuity(&self, x: &mut [T]) -> bool {
        delegate!(self, m => m.nudge_off_discontinuity(x))
    }
}

/// A smooth scalar function of the state whose long-time average is studied.
pub trait Observable<T: Real>: Send + Sync {
    fn eval(&self, x: &[T]) -> T;

    fn gradient_into(&self, x: &[T], out: &mut [T]);

    fn gradient(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        self.gradient_into(x, &mut out);
        out
    }
}

/// `J = cos(4 x2)` (second state component).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Cos4X2;

impl<T: Real> Observable<T> for Cos4X2 {
    fn eval(&self, x: &[T]) -> T {
        (T::lit(4.0) * x[1]).cos()
    }

    fn gradient_into(&self, x: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        out[1] = -T::lit(4.0) * (T::lit(4.0) * x[1]).sin();
    }
}

/// `J = sin(x2) cos(4 x2) x3`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SinCos4X2X3;

impl<T: Real> Observable<T> for SinCos4X2X3 {
    fn eval(&self, x: &[T]) -> T {
        x[1].sin() * (T::lit(4.0) * x[1]).cos() * x[2]
    }

    fn gradient_into(&self, x: &[T], out: &mut [T]) {
        let (s1, c1) = x[1].sin_cos();
        let (s4, c4) = (T::lit(4.0) * x[1]).sin_cos();
        out.iter_mut().for_each(|o| *o = T::zero());
        out[1] = (c1 * c4 - T::lit(4.0) * s1 * s4) * x[2];
        out[2] = s1 * c4;
    }
}

/// `J ≡ c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant<T>(pub T);

impl<T: Real> Observable<T> for Constant<T> {
    fn eval(&self, _x: &[T]) -> T {
        self.0
    }

    fn gradient_into(&self, _x: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
    }
}

/// The built-in observables, selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinObservable {
    /// `cos(4 x2)`
    Cos4X2,
    /// `sin(x2) cos(4 x2) x3`
    SinCos4X2X3,
    /// `1`
    One,
}

impl BuiltinObservable {
    pub const NAMES: [&'static str; 3] = ["cos4x2", "sin_cos4x2_x3", "one"];

    pub fn from_name(name: &str) -> Result<Self, DynamicsError> {
        match name {
            "cos4x2" => Ok(Self::Cos4X2),
            "sin_cos4x2_x3" => Ok(Self::SinCos4X2X3),
            "one" => Ok(Self::One),
            other => Err(DynamicsError::UnknownObservable(other.to_string())),
        }
    }

    /// Smallest state dimension the observable reads.
    pub fn min_dim(&self) -> usize {
        match self {
            Self::Cos4X2 => 2,
            Self::SinCos4X2X3 => 3,
            Self::One => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Cos4X2 => "cos4x2",
            Self::SinCos4X2X3 => "sin_cos4x2_x3",
            Self::One => "one",
        }
    }
}

impl<T: Real> Observable<T> for BuiltinObservable {
    fn eval(&self, x: &[T]) -> T {
        match self {
            Self::Cos4X2 => Cos4X2.eval(x),
            Self::SinCos4X2X3 => SinCos4X2X3.eval(x),
            Self::One => T::one(),
        }
    }

    fn gradient_into(&self, x: &[T], out: &mut [T]) {
        match self {
            Self::Cos4X2 => Cos4X2.gradient_into(x, out),
            Self::SinCos4X2X3 => SinCos4X2X3.gradient_into(x, out),
            Self::One => Constant(T::one()).gradient_into(x, out),
        }
    }
}
