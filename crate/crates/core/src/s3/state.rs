//! Per-trajectory recursions advanced one map step at a time.
//!
//! One call to [`S3State::step`] takes every quantity from time `k` to
//! `k + 1` in a fixed order:
//!
//! 1. frame: `Q_{k+1} R_{k+1} = Dφ_k Q_k`
//! 2. second-order chart derivatives `a^{ij}`
//! 3. `∂_{ξ^i} R` and the density gradient `g`
//! 4. regularized tangent `v`, coefficients `c`, raw `∂_{ξ_k} f`
//! 5. `∂_{ξ_{k+1}} f`, basis derivatives `p^{ij}`, coefficients `b^{ij}`
//! 6. parametric tangent derivatives `w^i`
//! 7. unstable integrand `u_{k+1} = Σ_i b^{ii} + c^i g^i`, then `x_{k+1} = φ(x_k)`
//!
//! The individual stages are public so they can be exercised on their own,
//! but they must be called in this order after [`S3State::load_derivatives`].

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{advance_primal, DiscreteMap};
use crate::linalg::{
    congruence_rescale_into, dot, packed_len, qr_positive, qr_positive_into, sym_index,
    upper_tri_inverse_into, CongruenceScratch, Matrix,
};
use crate::scalar::Real;

use super::S3Error;

/// Orthonormal basis of the unstable subspace plus the rescaling factor
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct UnstableFrame<T> {
    /// `n x m`, orthonormal columns (backward Lyapunov vectors).
    pub q: Matrix<T>,
    /// `m x m`, upper-triangular with positive diagonal.
    pub r: Matrix<T>,
    pub r_inv: Matrix<T>,
}

/// Second-order chart data at the origin of the current chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderBundle<T> {
    /// `n x m(m+1)/2`; column `sym_index(i, j)` is `a^{ij} = ∂_i ∂_j x`.
    pub a: Matrix<T>,
    /// `n x m²`; column `i * m + j` is `p^{ij} = ∂_j q^i`. Not symmetric.
    pub p: Matrix<T>,
    /// `dr[i]` is `∂_{ξ^i} R`, upper-triangular.
    pub dr: Vec<Matrix<T>>,
}

impl<T: Real> SecondOrderBundle<T> {
    #[inline]
    pub fn a_col(&self, i: usize, j: usize) -> &[T] {
        self.a.col(sym_index(i, j))
    }

    #[inline]
    pub fn p_col(&self, i: usize, j: usize) -> &[T] {
        let m = self.dr.len();
        self.p.col(i * m + j)
    }
}

/// Stable-part tangent and the scalars of the unstable integrand.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedTangent<T> {
    pub v: Vec<T>,
    /// `n x m`; column `i` is `w^i = ∂_{ξ^i} v`.
    pub w: Matrix<T>,
    pub c: Vec<T>,
    /// `b[(i, j)] = ∂_{ξ^j} c^i`.
    pub b: Matrix<T>,
    pub g: Vec<T>,
    /// `∇_ξ f`: raw (`ξ_k` coordinates) after the tangent stage, rescaled to
    /// `ξ_{k+1}` after the `p`/`b` stage.
    pub grad_f: Matrix<T>,
    /// `f_k = Dφ_k v_k + χ_{k+1}`.
    pub f: Vec<T>,
}

/// Map derivatives at the current state, reused by every stage of a step.
#[derive(Debug, Clone)]
struct Evaluated<T> {
    jac: Matrix<T>,
    pjac: Matrix<T>,
    chi: Vec<T>,
}

#[derive(Debug, Clone)]
struct Workspace<T> {
    s: Matrix<T>,
    a_tilde: Matrix<T>,
    grad_raw: Matrix<T>,
    tmp: Vec<T>,
    tmp2: Vec<T>,
    x_next: Vec<T>,
    cong: CongruenceScratch<T>,
}

/// Initial values for every recursion. `v0` defaults to zero.
#[derive(Debug, Clone)]
pub struct InitialState<T> {
    pub x0: Vec<T>,
    pub q0: Matrix<T>,
    pub a0: Matrix<T>,
    pub w0: Matrix<T>,
    pub v0: Vec<T>,
}

impl<T: Real> InitialState<T> {
    /// Random start: uniform `x0`, orthonormalized Gaussian `Q0`, and
    /// standard-normal `a0`, `w0`. `w0` is scaled by `w_scale` (zero gives
    /// `w0 = 0`). With `zero_second_order`, `a0 = 0` too.
    pub fn random<M: DiscreteMap<T> + ?Sized>(
        map: &M,
        rng: &mut dyn RngCore,
        w_scale: T,
        zero_second_order: bool,
    ) -> Result<Self, S3Error> {
        let n = map.dim();
        let m = map.unstable_dim();
        let x0 = map.sample_state(rng);
        let q0 = random_frame(n, m, rng)?;
        let mut a0 = Matrix::zeros(n, packed_len(m));
        let mut w0 = Matrix::zeros(n, m);
        if !zero_second_order {
            fill_normal(a0.as_mut_slice(), T::one(), rng);
            fill_normal(w0.as_mut_slice(), w_scale, rng);
        }
        Ok(Self {
            x0,
            q0,
            a0,
            w0,
            v0: vec![T::zero(); n],
        })
    }
}

/// Orthonormal `n x m` basis from a Gaussian matrix.
pub fn random_frame<T: Real>(
    n: usize,
    m: usize,
    rng: &mut dyn RngCore,
) -> Result<Matrix<T>, S3Error> {
    let mut g = Matrix::zeros(n, m);
    fill_normal(g.as_mut_slice(), T::one(), rng);
    Ok(qr_positive(&g)
        .map_err(|e| S3Error::Linalg { step: 0, source: e })?
        .q)
}

pub(crate) fn fill_normal<T: Real>(buf: &mut [T], scale: T, rng: &mut dyn RngCore) {
    for x in buf {
        let z: f64 = StandardNormal.sample(rng);
        *x = T::lit(z) * scale;
    }
}

/// Full recursion state of one trajectory.
#[derive(Debug, Clone)]
pub struct S3State<T> {
    n: usize,
    m: usize,
    k: usize,
    x: Vec<T>,
    frame: UnstableFrame<T>,
    q_prev: Matrix<T>,
    bundle: SecondOrderBundle<T>,
    tangent: RegularizedTangent<T>,
    u: T,
    nudges: u64,
    eval: Evaluated<T>,
    work: Workspace<T>,
}

impl<T: Real> S3State<T> {
    pub fn new(init: InitialState<T>) -> Result<Self, S3Error> {
        let n = init.x0.len();
        let m = init.q0.cols();
        let shape_err = |what: &str| S3Error::Config(format!("initial {what} has the wrong shape"));
        if init.q0.rows() != n || m == 0 || m > n {
            return Err(shape_err("Q0"));
        }
        if init.a0.shape() != (n, packed_len(m)) {
            return Err(shape_err("a0"));
        }
        if init.w0.shape() != (n, m) {
            return Err(shape_err("w0"));
        }
        if init.v0.len() != n {
            return Err(shape_err("v0"));
        }
        Ok(Self {
            n,
            m,
            k: 0,
            x: init.x0,
            frame: UnstableFrame {
                q: init.q0,
                r: Matrix::identity(m),
                r_inv: Matrix::identity(m),
            },
            q_prev: Matrix::zeros(n, m),
            bundle: SecondOrderBundle {
                a: init.a0,
                p: Matrix::zeros(n, m * m),
                dr: vec![Matrix::zeros(m, m); m],
            },
            tangent: RegularizedTangent {
                v: init.v0,
                w: init.w0,
                c: vec![T::zero(); m],
                b: Matrix::zeros(m, m),
                g: vec![T::zero(); m],
                grad_f: Matrix::zeros(n, m),
                f: vec![T::zero(); n],
            },
            u: T::zero(),
            nudges: 0,
            eval: Evaluated {
                jac: Matrix::zeros(n, n),
                pjac: Matrix::zeros(n, n),
                chi: vec![T::zero(); n],
            },
            work: Workspace {
                s: Matrix::zeros(n, m),
                a_tilde: Matrix::zeros(n, packed_len(m)),
                grad_raw: Matrix::zeros(n, m),
                tmp: vec![T::zero(); n],
                tmp2: vec![T::zero(); n],
                x_next: vec![T::zero(); n],
                cong: CongruenceScratch::new(m),
            },
        })
    }

    /// Time index of the current state.
    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn unstable_dim(&self) -> usize {
        self.m
    }

    pub fn x(&self) -> &[T] {
        &self.x
    }

    pub fn frame(&self) -> &UnstableFrame<T> {
        &self.frame
    }

    pub fn bundle(&self) -> &SecondOrderBundle<T> {
        &self.bundle
    }

    pub fn tangent(&self) -> &RegularizedTangent<T> {
        &self.tangent
    }

    /// Unstable integrand `u_k` produced by the most recent step.
    pub fn u(&self) -> T {
        self.u
    }

    /// How many times the primal state was nudged off a discontinuity.
    pub fn nudges(&self) -> u64 {
        self.nudges
    }

    /// Evaluates `Dφ`, `D∂sφ` and `χ` at the current state.
    pub fn load_derivatives<M: DiscreteMap<T> + ?Sized>(&mut self, map: &M) {
        self.nudges += map.nudge_off_discontinuity(&mut self.x) as u64;
        map.jacobian_into(&self.x, &mut self.eval.jac);
        map.perturbation_jacobian_into(&self.x, &mut self.eval.pjac);
        map.perturbation_into(&self.x, &mut self.eval.chi);
    }

    /// `S = Dφ_k Q_k`, then `Q_{k+1} R_{k+1} = S` and `R_{k+1}⁻¹`.
    /// `Q_k` is kept for the later stages of the same step.
    pub fn advance_frame(&mut self) -> Result<(), S3Error> {
        let step = self.k;
        self.eval.jac.matmul_into(&self.frame.q, &mut self.work.s);
        std::mem::swap(&mut self.frame.q, &mut self.q_prev);
        qr_positive_into(&self.work.s, &mut self.frame.q, &mut self.frame.r)
            .map_err(|source| S3Error::Linalg { step, source })?;
        upper_tri_inverse_into(&self.frame.r, &mut self.frame.r_inv)
            .map_err(|source| S3Error::Linalg { step, source })?;
        Ok(())
    }

    /// `a^{ij}_{k+1} = (D²φ_k(q^p, q^q) + Dφ_k a^{pq}) (R⁻¹)^{pi} (R⁻¹)^{qj}`.
    pub fn advance_second_order<M: DiscreteMap<T> + ?Sized>(&mut self, map: &M) {
        let m = self.m;
        for i in 0..m {
            for j in 0..=i {
                let col = sym_index(i, j);
                map.hessian_contract_into(
                    &self.x,
                    self.q_prev.col(i),
                    self.q_prev.col(j),
                    &mut self.work.tmp,
                );
                self.eval
                    .jac
                    .mul_vec_into(self.bundle.a.col(col), &mut self.work.tmp2);
                for ((d, &h), &l) in self
                    .work
                    .a_tilde
                    .col_mut(col)
                    .iter_mut()
                    .zip(&self.work.tmp)
                    .zip(&self.work.tmp2)
                {
                    *d = h + l;
                }
            }
        }
        congruence_rescale_into(
            &self.work.a_tilde,
            &self.frame.r_inv,
            &mut self.bundle.a,
            &mut self.work.cong,
        );
    }

    /// `(∂_{ξ^i} R)^{pq}`: `q^p·a^{pi}` on the diagonal,
    /// `q^p·a^{qi} + q^q·a^{pi}` above it, zero below; `g^i = −tr(∂_{ξ^i} R)`.
    pub fn compute_r_derivatives_and_g(&mut self) {
        let m = self.m;
        let q = &self.frame.q;
        let bundle = &mut self.bundle;
        for i in 0..m {
            let mut trace = T::zero();
            for p in 0..m {
                for qq in 0..m {
                    let val = if p == qq {
                        let d = dot(q.col(p), bundle.a.col(sym_index(p, i)));
                        trace += d;
                        d
                    } else if p < qq {
                        dot(q.col(p), bundle.a.col(sym_index(qq, i)))
                            + dot(q.col(qq), bundle.a.col(sym_index(p, i)))
                    } else {
                        T::zero()
                    };
                    bundle.dr[i][(p, qq)] = val;
                }
            }
            self.tangent.g[i] = -trace;
        }
    }

    /// `f_k = Dφ_k v_k + χ_{k+1}`, `c^i = q^i_{k+1}·f_k`,
    /// `∂_{ξ_k^i} f_k = D²φ_k(v_k, q_k^i) + Dφ_k w_k^i + D∂sφ_k q_k^i`,
    /// `v_{k+1} = f_k − c^i q^i_{k+1}`.
    pub fn advance_regularized_tangent<M: DiscreteMap<T> + ?Sized>(&mut self, map: &M) {
        let m = self.m;
        let t = &mut self.tangent;
        self.eval.jac.mul_vec_into(&t.v, &mut t.f);
        for (f, &chi) in t.f.iter_mut().zip(&self.eval.chi) {
            *f += chi;
        }
        for i in 0..m {
            t.c[i] = dot(self.frame.q.col(i), &t.f);

            let qi = self.q_prev.col(i);
            map.hessian_contract_into(&self.x, &t.v, qi, &mut self.work.tmp);
            self.eval.jac.mul_vec_into(t.w.col(i), &mut self.work.tmp2);
            let col = self.work.grad_raw.col_mut(i);
            for ((d, &h), &jw) in col.iter_mut().zip(&self.work.tmp).zip(&self.work.tmp2) {
                *d = h + jw;
            }
            self.eval.pjac.mul_vec_into(qi, &mut self.work.tmp);
            for (d, &pq) in col.iter_mut().zip(&self.work.tmp) {
                *d += pq;
            }
        }
        t.v.copy_from_slice(&t.f);
        for i in 0..m {
            let ci = t.c[i];
            for (v, &q) in t.v.iter_mut().zip(self.frame.q.col(i)) {
                *v -= ci * q;
            }
        }
        t.grad_f.copy_from(&self.work.grad_raw);
    }

    /// `∇_{ξ_{k+1}} f_k = ∇_{ξ_k} f_k R⁻¹`,
    /// `p^{ij} = a^{ij} − q^l (∂_{ξ^j} R)^{li}`,
    /// `b^{ij} = p^{ij}·f_k + q^i·(∇_{ξ_{k+1}} f_k)^{:j}`.
    pub fn compute_p_b(&mut self) {
        let m = self.m;
        self.work
            .grad_raw
            .matmul_into(&self.frame.r_inv, &mut self.tangent.grad_f);
        let q = &self.frame.q;
        let bundle = &mut self.bundle;
        for i in 0..m {
            for j in 0..m {
                let col = i * m + j;
                {
                    let a_ij = bundle.a.col(sym_index(i, j));
                    let dr_j = &bundle.dr[j];
                    let p = &mut bundle.p.as_mut_slice()[col * self.n..(col + 1) * self.n];
                    p.copy_from_slice(a_ij);
                    for l in 0..m {
                        let coeff = dr_j[(l, i)];
                        if coeff != T::zero() {
                            for (pv, &qv) in p.iter_mut().zip(q.col(l)) {
                                *pv -= coeff * qv;
                            }
                        }
                    }
                }
                self.tangent.b[(i, j)] = dot(bundle.p.col(col), &self.tangent.f)
                    + dot(q.col(i), self.tangent.grad_f.col(j));
            }
        }
    }

    /// `w^i_{k+1} = (∇_{ξ_{k+1}} f_k)^{:i} − b^{li} q^l − c^l p^{li}`.
    pub fn advance_w(&mut self) {
        let m = self.m;
        let t = &mut self.tangent;
        for i in 0..m {
            let w = t.w.col_mut(i);
            w.copy_from_slice(t.grad_f.col(i));
            for l in 0..m {
                let b = t.b[(l, i)];
                let c = t.c[l];
                let q = self.frame.q.col(l);
                let p = self.bundle.p.col(l * m + i);
                for ((wv, &qv), &pv) in w.iter_mut().zip(q).zip(p) {
                    *wv -= b * qv + c * pv;
                }
            }
        }
    }

    /// `u = Σ_i b^{ii} + c^i g^i`.
    pub fn unstable_integrand(&self) -> T {
        (0..self.m)
            .map(|i| self.tangent.b[(i, i)] + self.tangent.c[i] * self.tangent.g[i])
            .sum()
    }

    /// Advances every recursion and the primal state by one step and returns `u_{k+1}`.
    pub fn step<M: DiscreteMap<T> + ?Sized>(&mut self, map: &M) -> Result<T, S3Error> {
        self.load_derivatives(map);
        self.advance_frame()?;
        self.advance_second_order(map);
        self.compute_r_derivatives_and_g();
        self.advance_regularized_tangent(map);
        self.compute_p_b();
        self.advance_w();
        self.u = self.unstable_integrand();
        if !self.u.is_finite() || !self.tangent.v.iter().all(|v| v.is_finite()) {
            return Err(S3Error::NonFinite {
                step: self.k,
                what: "tangent recursion",
            });
        }
        self.nudges += advance_primal(map, &mut self.x, &mut self.work.x_next).map_err(|_| {
            S3Error::NonFinite {
                step: self.k,
                what: "primal state",
            }
        })? as u64;
        self.k += 1;
        Ok(self.u)
    }
}
