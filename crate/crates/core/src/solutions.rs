//! Closed-form free solutions and uniform-grid integration of the matrix
//! boundary problems
//!
//! ```text
//! left side:   φ′ = B(λE − P(x))·φ          (φ-type problems)
//! right side:  φ̃′ = φ̃·(P(x) − λE)B          (tilde problems)
//!              ψ′ = ψ·B(P(x) − λE)           (matrix inverse of φ)
//! ```
//!
//! Two one-step 4th-order schemes share the grid: classical RK4 while
//! `|λ|·h ≤ 0.02` (inside its per-step budget) and a two-point Gauss Magnus
//! step with the exact 2×2 exponential otherwise, whose local error stays
//! λ-uniform on the imaginary axis. The switch is deterministic in `(λ, h)`.
//! An embedded step-doubling estimate is checked every 16th step against the
//! budget `1e−10·(1 + ‖φ‖)`.

use num_complex::Complex64 as C64;

use crate::algebra::Mat2;
use crate::error::{CoreError, Result};
use crate::potential::PotentialSpec;

/// RK4 is used while `|λ|·h` stays at or below this.
pub const RK4_SWITCH: f64 = 0.02;
/// Per-step error budget multiplier.
pub const STEP_BUDGET: f64 = 1e-10;
/// Embedded estimate stride.
const CHECK_STRIDE: usize = 16;

const GAUSS_OFF: f64 = 0.288_675_134_594_812_9; // √3/6

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Phi,
    PhiTilde,
    PsiInverse,
}

/// Matrix solution values on the uniform grid `x_k = k·h`.
#[derive(Clone)]
pub struct SolutionGrid {
    pub h: f64,
    pub lambda: C64,
    pub side: Side,
    pub values: Vec<Mat2>,
}

impl SolutionGrid {
    pub fn n_nodes(&self) -> usize {
        self.values.len()
    }

    pub fn x(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn x_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.h
    }

    pub fn at(&self, k: usize) -> Mat2 {
        self.values[k]
    }
}

// ---------------------------------------------------------------------------
// Free (P = 0) closed forms
// ---------------------------------------------------------------------------

/// Boundary matrix `[[cosh μ, sinh μ], [sinh μ, cosh μ]]`.
pub fn mu_matrix(mu: C64) -> Mat2 {
    let ch = mu.cosh();
    let sh = mu.sinh();
    Mat2::new(ch, sh, sh, ch)
}

/// `C(a) = cos(a)·E + i sin(a)·B`; every free object is `C` of some argument.
#[inline]
pub fn circ(arg: C64) -> Mat2 {
    let c = arg.cos();
    let is = C64::new(0.0, 1.0) * arg.sin();
    Mat2::new(c, is, is, c)
}

/// Free solution of the μ-boundary problem at `λ = iρ`, `ν = −iμ`.
pub fn free_solution(x: f64, rho: f64, nu: C64) -> Mat2 {
    circ(C64::new(rho * x, 0.0) + nu)
}

/// Matrix inverse of [`free_solution`].
pub fn free_inverse(x: f64, rho: f64, nu: C64) -> Mat2 {
    circ(-(C64::new(rho * x, 0.0) + nu))
}

/// Free solution of the projector-boundary problem: `Q cos ρx + i BQ sin ρx`.
pub fn free_q(x: f64, rho: f64, q: &Mat2) -> Mat2 {
    let c = C64::new((rho * x).cos(), 0.0);
    let is = C64::new(0.0, (rho * x).sin());
    q.scale(c) + q.b_left().scale(is)
}

/// Free solution of the adjoint-side projector problem: `Q cos ρx − i QB sin ρx`.
pub fn free_q_tilde(x: f64, rho: f64, q: &Mat2) -> Mat2 {
    let c = C64::new((rho * x).cos(), 0.0);
    let is = C64::new(0.0, (rho * x).sin());
    q.scale(c) - q.b_right().scale(is)
}

// ---------------------------------------------------------------------------
// Coefficient cache
// ---------------------------------------------------------------------------

/// Potential samples at every point any stepper stage touches, built once per
/// `(x_max, h)` and shared read-only across the λ sweep.
pub struct OdeCache {
    pub h: f64,
    pub n_steps: usize,
    node: Vec<Mat2>,
    mid: Vec<Mat2>,
    g1: Vec<Mat2>,
    g2: Vec<Mat2>,
}

impl OdeCache {
    pub fn new(p: &PotentialSpec, x_max: f64, h: f64) -> Result<OdeCache> {
        let steps_f = x_max / h;
        let n_steps = steps_f.round() as usize;
        if (steps_f - n_steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
            return Err(CoreError::Grid(format!(
                "x_max/h must be integral (x_max = {x_max}, h = {h})"
            )));
        }
        let mut node = Vec::with_capacity(n_steps + 1);
        let mut mid = Vec::with_capacity(n_steps);
        let mut g1 = Vec::with_capacity(n_steps);
        let mut g2 = Vec::with_capacity(n_steps);
        for k in 0..=n_steps {
            node.push(p.eval(k as f64 * h));
        }
        for k in 0..n_steps {
            let x = k as f64 * h;
            mid.push(p.eval(x + 0.5 * h));
            g1.push(p.eval(x + (0.5 - GAUSS_OFF) * h));
            g2.push(p.eval(x + (0.5 + GAUSS_OFF) * h));
        }
        Ok(OdeCache { h, n_steps, node, mid, g1, g2 })
    }

    pub fn x_max(&self) -> f64 {
        self.n_steps as f64 * self.h
    }
}

/// Which matrix product the flow multiplies by.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Flow {
    /// `y′ = B(λE − P)·y`
    Left,
    /// `y′ = y·(P − λE)B`
    RightTilde,
    /// `y′ = y·B(P − λE)`
    RightPsi,
}

#[inline]
fn coeff(flow: Flow, p: Mat2, lambda: C64) -> Mat2 {
    let lam_e = Mat2::identity().scale(lambda);
    match flow {
        Flow::Left => (lam_e - p).b_left(),
        Flow::RightTilde => (p - lam_e).b_right(),
        Flow::RightPsi => (p - lam_e).b_left(),
    }
}

#[inline]
fn rk4_step(flow: Flow, y: Mat2, a0: Mat2, am: Mat2, a1: Mat2, h: f64) -> Mat2 {
    let mul = |a: Mat2, y: Mat2| -> Mat2 {
        match flow {
            Flow::Left => a * y,
            _ => y * a,
        }
    };
    let k1 = mul(a0, y);
    let k2 = mul(am, y + k1.scale_re(0.5 * h));
    let k3 = mul(am, y + k2.scale_re(0.5 * h));
    let k4 = mul(a1, y + k3.scale_re(h));
    y + (k1 + k2.scale_re(2.0) + k3.scale_re(2.0) + k4).scale_re(h / 6.0)
}

#[inline]
fn magnus_step(flow: Flow, y: Mat2, a1: Mat2, a2: Mat2, h: f64) -> Mat2 {
    let s = 3.0f64.sqrt() * h * h / 12.0;
    match flow {
        Flow::Left => {
            let omega = (a1 + a2).scale_re(0.5 * h) + Mat2::commutator(&a2, &a1).scale_re(s);
            omega.exp() * y
        }
        _ => {
            let omega = (a1 + a2).scale_re(0.5 * h) + Mat2::commutator(&a1, &a2).scale_re(s);
            y * omega.exp()
        }
    }
}

fn sweep(
    flow: Flow,
    cache: &OdeCache,
    p: &PotentialSpec,
    init: Mat2,
    lambda: C64,
    mut observe: impl FnMut(usize, &Mat2),
) -> Result<()> {
    let h = cache.h;
    let use_rk4 = lambda.norm() * h <= RK4_SWITCH;
    let mut y = init;
    observe(0, &y);
    for k in 0..cache.n_steps {
        let y_next = if use_rk4 {
            rk4_step(
                flow,
                y,
                coeff(flow, cache.node[k], lambda),
                coeff(flow, cache.mid[k], lambda),
                coeff(flow, cache.node[k + 1], lambda),
                h,
            )
        } else {
            magnus_step(
                flow,
                y,
                coeff(flow, cache.g1[k], lambda),
                coeff(flow, cache.g2[k], lambda),
                h,
            )
        };
        if k % CHECK_STRIDE == 0 {
            let x = k as f64 * h;
            let half = |y0: Mat2, x0: f64| -> Mat2 {
                let hh = 0.5 * h;
                if use_rk4 {
                    rk4_step(
                        flow,
                        y0,
                        coeff(flow, p.eval(x0), lambda),
                        coeff(flow, p.eval(x0 + 0.5 * hh), lambda),
                        coeff(flow, p.eval(x0 + hh), lambda),
                        hh,
                    )
                } else {
                    magnus_step(
                        flow,
                        y0,
                        coeff(flow, p.eval(x0 + (0.5 - GAUSS_OFF) * hh), lambda),
                        coeff(flow, p.eval(x0 + (0.5 + GAUSS_OFF) * hh), lambda),
                        hh,
                    )
                }
            };
            let fine = half(half(y, x), x + 0.5 * h);
            let estimate = (fine - y_next).norm_inf();
            let budget = STEP_BUDGET * (1.0 + y.norm_inf());
            if estimate > budget {
                return Err(CoreError::StepTooLarge { estimate, budget, x });
            }
        }
        y = y_next;
        observe(k + 1, &y);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Public integrators
// ---------------------------------------------------------------------------

/// Integrate `Bφ′ + Pφ = λφ`, `φ(0) = init`, storing every node.
pub fn integrate_phi(
    p: &PotentialSpec,
    init: Mat2,
    lambda: C64,
    x_max: f64,
    h: f64,
) -> Result<SolutionGrid> {
    let cache = OdeCache::new(p, x_max, h)?;
    integrate_phi_cached(&cache, p, init, lambda)
}

pub fn integrate_phi_cached(
    cache: &OdeCache,
    p: &PotentialSpec,
    init: Mat2,
    lambda: C64,
) -> Result<SolutionGrid> {
    let mut values = vec![Mat2::zero(); cache.n_steps + 1];
    sweep(Flow::Left, cache, p, init, lambda, |k, y| values[k] = *y)?;
    Ok(SolutionGrid { h: cache.h, lambda, side: Side::Phi, values })
}

/// Integrate `−φ̃′B + φ̃P = λφ̃`, `φ̃(0) = init`.
pub fn integrate_phi_tilde(
    p: &PotentialSpec,
    init: Mat2,
    lambda: C64,
    x_max: f64,
    h: f64,
) -> Result<SolutionGrid> {
    let cache = OdeCache::new(p, x_max, h)?;
    integrate_phi_tilde_cached(&cache, p, init, lambda)
}

pub fn integrate_phi_tilde_cached(
    cache: &OdeCache,
    p: &PotentialSpec,
    init: Mat2,
    lambda: C64,
) -> Result<SolutionGrid> {
    let mut values = vec![Mat2::zero(); cache.n_steps + 1];
    sweep(Flow::RightTilde, cache, p, init, lambda, |k, y| values[k] = *y)?;
    Ok(SolutionGrid { h: cache.h, lambda, side: Side::PhiTilde, values })
}

/// Integrate the matrix inverse of the μ-boundary solution by its own ODE
/// (`ψ′ = ψB(P − λE)`, `ψ(0) = mu_matrix(μ)⁻¹`) rather than by pointwise
/// inversion; the pointwise product with a φ grid is the cross-check.
pub fn inverse_solution(
    p: &PotentialSpec,
    mu: C64,
    lambda: C64,
    x_max: f64,
    h: f64,
) -> Result<SolutionGrid> {
    let cache = OdeCache::new(p, x_max, h)?;
    inverse_solution_cached(&cache, p, mu, lambda)
}

pub fn inverse_solution_cached(
    cache: &OdeCache,
    p: &PotentialSpec,
    mu: C64,
    lambda: C64,
) -> Result<SolutionGrid> {
    let init = mu_matrix(mu).inv()?;
    let mut values = vec![Mat2::zero(); cache.n_steps + 1];
    sweep(Flow::RightPsi, cache, p, init, lambda, |k, y| values[k] = *y)?;
    Ok(SolutionGrid { h: cache.h, lambda, side: Side::PsiInverse, values })
}

/// Observer-driven sweeps for transform accumulation (no grid storage).
pub fn sweep_phi(
    cache: &OdeCache,
    p: &PotentialSpec,
    init: Mat2,
    lambda: C64,
    observe: impl FnMut(usize, &Mat2),
) -> Result<()> {
    sweep(Flow::Left, cache, p, init, lambda, observe)
}

pub fn sweep_phi_tilde(
    cache: &OdeCache,
    p: &PotentialSpec,
    init: Mat2,
    lambda: C64,
    observe: impl FnMut(usize, &Mat2),
) -> Result<()> {
    sweep(Flow::RightTilde, cache, p, init, lambda, observe)
}

/// Max node-wise `‖φψ − E‖∞`; errors above 1e−6 signal a too-coarse step.
pub fn check_inverse_drift(phi: &SolutionGrid, psi: &SolutionGrid) -> Result<f64> {
    assert_eq!(phi.values.len(), psi.values.len());
    let mut drift = 0.0f64;
    for (a, b) in phi.values.iter().zip(psi.values.iter()) {
        drift = drift.max((*a * *b - Mat2::identity()).norm_inf());
    }
    if drift > 1e-6 {
        return Err(CoreError::InverseDrift { drift });
    }
    Ok(drift)
}
