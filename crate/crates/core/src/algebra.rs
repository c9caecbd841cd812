//! Complex 2×2 matrix arithmetic and the structural constants of the system.
//!
//! Everything downstream lives in the algebra generated by
//!
//! ```text
//! B = | 0 1 |        E = | 1 0 |
//!     | 1 0 |            | 0 1 |
//! ```
//!
//! together with degenerate boundary projectors `Q` satisfying `QB + BQ = B`,
//! `Q² = Q`, `det Q = 0`. All values are immutable and all operations pure.

use num_complex::Complex64 as C64;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::CoreError;

/// Inversion is refused when `|det|` falls at or below this.
pub const EPS_SINGULAR: f64 = 1e-12;
/// Structural (projector) identities must hold entrywise within this.
pub const EPS_ALGEBRA: f64 = 1e-13;

pub const ZERO_C: C64 = C64::new(0.0, 0.0);
pub const ONE_C: C64 = C64::new(1.0, 0.0);
pub const I_C: C64 = C64::new(0.0, 1.0);

/// Dense complex 2×2 matrix, row-major `[m11, m12, m21, m22]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2 {
    pub m: [C64; 4],
}

impl Mat2 {
    #[inline]
    pub const fn new(m11: C64, m12: C64, m21: C64, m22: C64) -> Self {
        Mat2 { m: [m11, m12, m21, m22] }
    }

    #[inline]
    pub fn from_real(m11: f64, m12: f64, m21: f64, m22: f64) -> Self {
        Mat2::new(
            C64::new(m11, 0.0),
            C64::new(m12, 0.0),
            C64::new(m21, 0.0),
            C64::new(m22, 0.0),
        )
    }

    #[inline]
    pub const fn zero() -> Self {
        Mat2 { m: [ZERO_C; 4] }
    }

    #[inline]
    pub const fn identity() -> Self {
        Mat2 { m: [ONE_C, ZERO_C, ZERO_C, ONE_C] }
    }

    /// The off-diagonal unit matrix driving the first-order system.
    #[inline]
    pub const fn b() -> Self {
        Mat2 { m: [ZERO_C, ONE_C, ONE_C, ZERO_C] }
    }

    /// `a·E + b·B`; matrices of this shape form the commuting subalgebra.
    #[inline]
    pub fn circulant(a: C64, b: C64) -> Self {
        Mat2::new(a, b, b, a)
    }

    #[inline]
    pub fn det(&self) -> C64 {
        self.m[0] * self.m[3] - self.m[1] * self.m[2]
    }

    #[inline]
    pub fn trace(&self) -> C64 {
        self.m[0] + self.m[3]
    }

    /// Entrywise sup norm (the norm used by every tolerance in this crate).
    #[inline]
    pub fn norm_inf(&self) -> f64 {
        self.m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn inv(&self) -> Result<Mat2, CoreError> {
        let d = self.det();
        if d.norm() <= EPS_SINGULAR {
            return Err(CoreError::SingularMatrix { det_norm: d.norm() });
        }
        let inv_d = ONE_C / d;
        Ok(Mat2::new(
            self.m[3] * inv_d,
            -self.m[1] * inv_d,
            -self.m[2] * inv_d,
            self.m[0] * inv_d,
        ))
    }

    #[inline]
    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.m[0], self.m[2], self.m[1], self.m[3])
    }

    #[inline]
    pub fn conj(&self) -> Mat2 {
        Mat2::new(self.m[0].conj(), self.m[1].conj(), self.m[2].conj(), self.m[3].conj())
    }

    /// Entry `(k,l)` of the result is the conjugate of entry `(l,k)`.
    #[inline]
    pub fn conj_transpose(&self) -> Mat2 {
        self.transpose().conj()
    }

    #[inline]
    pub fn commutator(a: &Mat2, b: &Mat2) -> Mat2 {
        *a * *b - *b * *a
    }

    #[inline]
    pub fn scale(&self, s: C64) -> Mat2 {
        Mat2 { m: [self.m[0] * s, self.m[1] * s, self.m[2] * s, self.m[3] * s] }
    }

    #[inline]
    pub fn scale_re(&self, s: f64) -> Mat2 {
        self.scale(C64::new(s, 0.0))
    }

    /// Matrix–vector product.
    #[inline]
    pub fn apply(&self, v: [C64; 2]) -> [C64; 2] {
        [
            self.m[0] * v[0] + self.m[1] * v[1],
            self.m[2] * v[0] + self.m[3] * v[1],
        ]
    }

    /// k-th column (0-based).
    #[inline]
    pub fn col(&self, k: usize) -> [C64; 2] {
        [self.m[k], self.m[2 + k]]
    }

    /// k-th row (0-based).
    #[inline]
    pub fn row(&self, k: usize) -> [C64; 2] {
        [self.m[2 * k], self.m[2 * k + 1]]
    }

    /// Exact left product with `B` (row swap).
    #[inline]
    pub fn b_left(&self) -> Mat2 {
        Mat2::new(self.m[2], self.m[3], self.m[0], self.m[1])
    }

    /// Exact right product with `B` (column swap).
    #[inline]
    pub fn b_right(&self) -> Mat2 {
        Mat2::new(self.m[1], self.m[0], self.m[3], self.m[2])
    }

    /// Matrix exponential via the 2×2 closed form
    /// `exp(M) = e^τ (cosh(s)·E + sinhc(s)·(M − τE))`, `τ = tr/2`, `s² = τ² − det`.
    pub fn exp(&self) -> Mat2 {
        let tau = self.trace() * 0.5;
        let n = *self - Mat2::identity().scale(tau);
        let s2 = tau * tau - self.det();
        let s = s2.sqrt();
        let (ch, shc) = cosh_sinhc(s);
        let e = tau.exp();
        (Mat2::identity().scale(ch) + n.scale(shc)).scale(e)
    }
}

/// `(cosh s, sinh(s)/s)` with a series fallback near `s = 0`.
fn cosh_sinhc(s: C64) -> (C64, C64) {
    if s.norm() < 1e-4 {
        let s2 = s * s;
        // cosh s = 1 + s²/2 + s⁴/24, sinh s / s = 1 + s²/6 + s⁴/120
        let ch = ONE_C + s2 * 0.5 + s2 * s2 * (1.0 / 24.0);
        let shc = ONE_C + s2 * (1.0 / 6.0) + s2 * s2 * (1.0 / 120.0);
        (ch, shc)
    } else {
        (s.cosh(), s.sinh() / s)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    #[inline]
    fn add(self, o: Mat2) -> Mat2 {
        Mat2 {
            m: [
                self.m[0] + o.m[0],
                self.m[1] + o.m[1],
                self.m[2] + o.m[2],
                self.m[3] + o.m[3],
            ],
        }
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    #[inline]
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2 {
            m: [
                self.m[0] - o.m[0],
                self.m[1] - o.m[1],
                self.m[2] - o.m[2],
                self.m[3] - o.m[3],
            ],
        }
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    #[inline]
    fn neg(self) -> Mat2 {
        Mat2 { m: [-self.m[0], -self.m[1], -self.m[2], -self.m[3]] }
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    #[inline]
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m[0] * o.m[0] + self.m[1] * o.m[2],
            self.m[0] * o.m[1] + self.m[1] * o.m[3],
            self.m[2] * o.m[0] + self.m[3] * o.m[2],
            self.m[2] * o.m[1] + self.m[3] * o.m[3],
        )
    }
}

impl Mul<C64> for Mat2 {
    type Output = Mat2;
    #[inline]
    fn mul(self, s: C64) -> Mat2 {
        self.scale(s)
    }
}

/// A validated degenerate boundary projector: `QB + BQ = B`, `Q² = Q`, `det Q = 0`.
///
/// Besides the matrix itself this carries the rank-1 column factorization
/// `Q = u·vᵀ` and the hyperbolic parametrization of the pivot direction,
/// `u ∝ c*·(cosh μ, sinh μ)ᵀ`, used to reduce projector boundary data to the
/// scalar-column form the kernel solver works with.
#[derive(Clone, Copy, Debug)]
pub struct ProjectorQ {
    pub q: Mat2,
    /// Pivot column index (larger-norm column; ties resolved toward column 0).
    pub pivot_col: usize,
    /// Pivot column of `q`.
    pub u: [C64; 2],
    /// Row vector with `q = u·vᵀ`.
    pub v: [C64; 2],
    /// Hyperbolic angle of the pivot direction.
    pub mu: C64,
    /// Scale with `u = c*·(cosh μ, sinh μ)ᵀ`.
    pub c_star: C64,
}

fn col_norm(c: [C64; 2]) -> f64 {
    (c[0].norm_sqr() + c[1].norm_sqr()).sqrt()
}

/// Hyperbolic parametrization of a direction `(u0, u1)` with `u0² ≠ u1²`:
/// returns `(μ, c*)` with `(u0, u1) = c*·(cosh μ, sinh μ)`.
///
/// When `|u1| > |u0|` the cosh-leading form is ill-conditioned (cosh μ → 0 is
/// reachable at μ = iπ/2), so the sinh-leading parametrization
/// `μ = atanh(u0/u1) + iπ/2` is used instead. Deterministic: the branch is
/// picked by comparing `|u0|` and `|u1|` only.
pub fn hyperbolic_direction(u0: C64, u1: C64) -> Result<(C64, C64), CoreError> {
    let n0 = u0.norm();
    let n1 = u1.norm();
    if n0 == 0.0 && n1 == 0.0 {
        return Err(CoreError::NotAdmissible {
            constraint: "pivot column is zero".into(),
            residual: 0.0,
        });
    }
    let (mu, c_star) = if n1 <= n0 {
        let t = u1 / u0;
        if (t - ONE_C).norm() < 1e-12 || (t + ONE_C).norm() < 1e-12 {
            return Err(CoreError::NotAdmissible {
                constraint: "pivot direction lies on the light cone u0² = u1²".into(),
                residual: (t.norm() - 1.0).abs(),
            });
        }
        let mu = t.atanh();
        (mu, u0 / mu.cosh())
    } else {
        let t = u0 / u1;
        if (t - ONE_C).norm() < 1e-12 || (t + ONE_C).norm() < 1e-12 {
            return Err(CoreError::NotAdmissible {
                constraint: "pivot direction lies on the light cone u0² = u1²".into(),
                residual: (t.norm() - 1.0).abs(),
            });
        }
        // coth μ = u0/u1  ⇔  tanh(μ − iπ/2) = u0/u1
        let mu = t.atanh() + C64::new(0.0, std::f64::consts::FRAC_PI_2);
        (mu, u1 / mu.sinh())
    };
    Ok((mu, c_star))
}

/// Checks the three projector constraints and builds the rank-1 factorization.
pub fn validate_projector(q: Mat2) -> Result<ProjectorQ, CoreError> {
    let b = Mat2::b();
    let anti = q * b + b * q - b;
    let r1 = anti.norm_inf();
    if r1 > EPS_ALGEBRA {
        return Err(CoreError::NotAdmissible {
            constraint: "QB + BQ = B".into(),
            residual: r1,
        });
    }
    let idem = q * q - q;
    let r2 = idem.norm_inf();
    if r2 > EPS_ALGEBRA {
        return Err(CoreError::NotAdmissible {
            constraint: "Q² = Q".into(),
            residual: r2,
        });
    }
    // Implied by the first two, asserted independently.
    let r3 = q.det().norm();
    if r3 > EPS_ALGEBRA {
        return Err(CoreError::NotAdmissible {
            constraint: "det Q = 0".into(),
            residual: r3,
        });
    }

    let c0 = q.col(0);
    let c1 = q.col(1);
    let pivot_col = if col_norm(c1) > col_norm(c0) { 1 } else { 0 };
    let u = q.col(pivot_col);
    // Row extraction from the larger-|entry| row of the pivot column.
    let r0 = if u[1].norm() > u[0].norm() { 1 } else { 0 };
    let v = [q.row(r0)[0] / u[r0], q.row(r0)[1] / u[r0]];
    let (mu, c_star) = hyperbolic_direction(u[0], u[1])?;
    Ok(ProjectorQ { q, pivot_col, u, v, mu, c_star })
}

impl ProjectorQ {
    /// The canonical projector `diag(1, 0)`.
    pub fn diag_10() -> ProjectorQ {
        validate_projector(Mat2::from_real(1.0, 0.0, 0.0, 0.0)).expect("diag(1,0) is admissible")
    }

    /// `conj(Qᵀ)`, validated (admissible whenever `Q` is).
    pub fn conj_transpose(&self) -> Result<ProjectorQ, CoreError> {
        validate_projector(self.q.conj_transpose())
    }
}
