//! Coefficient matrices `P(x)` on the half line and the explicit gauge factor
//! `R(P1,P2)(x)` built from their entry-sum antiderivatives.
//!
//! Potentials are supplied as closed-form families (zero, constant, raised
//! cosine, Gaussian bump) or as uniform sample tables with cubic-spline
//! interpolation; C¹ smoothness of a table is the supplier's responsibility.
//! Entries are complex-valued throughout.

use num_complex::Complex64 as C64;
use std::sync::Arc;

use crate::algebra::Mat2;
use crate::error::{CoreError, Result};
use crate::quadrature::{adaptive_simpson, CubicSpline};

type DynField = Arc<dyn Fn(f64) -> C64 + Send + Sync>;

/// One evaluable complex entry with its derivative and, when the family
/// permits, a closed-form antiderivative vanishing at 0.
#[derive(Clone)]
pub struct ScalarField {
    pub f: DynField,
    pub df: DynField,
    pub antideriv: Option<DynField>,
}

impl ScalarField {
    pub fn zero() -> ScalarField {
        let z = |_x: f64| C64::new(0.0, 0.0);
        ScalarField {
            f: Arc::new(z),
            df: Arc::new(z),
            antideriv: Some(Arc::new(z)),
        }
    }

    pub fn constant(c: C64) -> ScalarField {
        ScalarField {
            f: Arc::new(move |_| c),
            df: Arc::new(|_| C64::new(0.0, 0.0)),
            antideriv: Some(Arc::new(move |x| c * x)),
        }
    }

    /// `amp·(1 + cos(π(x−c)/w))/2` on `|x−c| ≤ w`, zero outside; C¹ with an
    /// elementary antiderivative.
    pub fn raised_cosine(amp: C64, center: f64, half_width: f64) -> ScalarField {
        let (c, w) = (center, half_width);
        let f = move |x: f64| {
            if (x - c).abs() >= w {
                C64::new(0.0, 0.0)
            } else {
                amp * (0.5 * (1.0 + (std::f64::consts::PI * (x - c) / w).cos()))
            }
        };
        let df = move |x: f64| {
            if (x - c).abs() >= w {
                C64::new(0.0, 0.0)
            } else {
                let p = std::f64::consts::PI / w;
                amp * (-0.5 * p * (p * (x - c)).sin())
            }
        };
        let anti = move |x: f64| {
            let pi = std::f64::consts::PI;
            if x <= c - w {
                C64::new(0.0, 0.0)
            } else if x >= c + w {
                amp * w
            } else {
                amp * (0.5 * ((x - c + w) + (w / pi) * (pi * (x - c) / w).sin()))
            }
        };
        ScalarField {
            f: Arc::new(f),
            df: Arc::new(df),
            antideriv: Some(Arc::new(anti)),
        }
    }

    /// `amp·exp(−(x−c)²/(2w²))`; no elementary antiderivative, so pairs using
    /// it fall back to cached quadrature.
    pub fn gaussian(amp: C64, center: f64, width: f64) -> ScalarField {
        let (c, w) = (center, width);
        let f = move |x: f64| amp * (-((x - c) * (x - c)) / (2.0 * w * w)).exp();
        let df = move |x: f64| {
            amp * ((-((x - c) * (x - c)) / (2.0 * w * w)).exp() * (-(x - c) / (w * w)))
        };
        ScalarField {
            f: Arc::new(f),
            df: Arc::new(df),
            antideriv: None,
        }
    }

    /// Cubic-spline interpolant of uniform samples (table potentials).
    pub fn from_samples(x0: f64, h: f64, samples: &[C64]) -> ScalarField {
        let spline = Arc::new(CubicSpline::new(x0, h, samples));
        let sp = spline.clone();
        let x_end = x0 + (samples.len() - 1) as f64 * h;
        let f = move |x: f64| {
            if x < x0 || x > x_end {
                C64::new(0.0, 0.0)
            } else {
                sp.eval(x)
            }
        };
        let sp2 = spline.clone();
        let df = move |x: f64| {
            if x < x0 || x > x_end {
                C64::new(0.0, 0.0)
            } else {
                // centered difference on the spline; adequate for diagnostics
                let d = (h * 0.5).min(1e-5_f64.max(h * 1e-3));
                (sp2.eval((x + d).min(x_end)) - sp2.eval((x - d).max(x0)))
                    / ((x + d).min(x_end) - (x - d).max(x0))
            }
        };
        ScalarField {
            f: Arc::new(f),
            df: Arc::new(df),
            antideriv: None,
        }
    }

    fn negate_conj(&self) -> ScalarField {
        let f = self.f.clone();
        let df = self.df.clone();
        let anti = self.antideriv.clone();
        ScalarField {
            f: Arc::new(move |x| -f(x).conj()),
            df: Arc::new(move |x| -df(x).conj()),
            antideriv: anti.map(|a| {
                let a2: DynField = Arc::new(move |x: f64| -a(x).conj());
                a2
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyTag {
    Zero,
    /// `BP = PB`, i.e. `p11 ≡ p22` and `p12 ≡ p21`.
    Commuting,
    General,
}

/// Row-major entry order `[p11, p12, p21, p22]`, matching [`Mat2`].
#[derive(Clone)]
pub struct PotentialSpec {
    pub entries: [ScalarField; 4],
    pub support_radius: f64,
    pub family: FamilyTag,
}

impl PotentialSpec {
    pub fn zero() -> PotentialSpec {
        PotentialSpec {
            entries: [
                ScalarField::zero(),
                ScalarField::zero(),
                ScalarField::zero(),
                ScalarField::zero(),
            ],
            support_radius: 0.0,
            family: FamilyTag::Zero,
        }
    }

    /// Constant commuting potential `[[a, b], [b, a]]`.
    pub fn commuting_constant(a: C64, b: C64) -> PotentialSpec {
        PotentialSpec {
            entries: [
                ScalarField::constant(a),
                ScalarField::constant(b),
                ScalarField::constant(b),
                ScalarField::constant(a),
            ],
            support_radius: f64::INFINITY,
            family: FamilyTag::Commuting,
        }
    }

    /// Raised-cosine commuting bump: `a(x)` on the diagonal, `b(x)` off it.
    pub fn commuting_bump(amp_a: C64, amp_b: C64, center: f64, half_width: f64) -> PotentialSpec {
        let a = ScalarField::raised_cosine(amp_a, center, half_width);
        let b = ScalarField::raised_cosine(amp_b, center, half_width);
        PotentialSpec {
            entries: [a.clone(), b.clone(), b, a],
            support_radius: center + half_width,
            family: FamilyTag::Commuting,
        }
    }

    /// Gaussian bump in one entry, the rest zero.
    pub fn gaussian_bump(entry: usize, amp: C64, center: f64, width: f64) -> PotentialSpec {
        let mut entries = [
            ScalarField::zero(),
            ScalarField::zero(),
            ScalarField::zero(),
            ScalarField::zero(),
        ];
        entries[entry] = ScalarField::gaussian(amp, center, width);
        PotentialSpec {
            entries,
            support_radius: f64::INFINITY,
            family: FamilyTag::General,
        }
    }

    /// Raised-cosine bump in one entry, the rest zero.
    pub fn raised_cosine_bump(entry: usize, amp: C64, center: f64, half_width: f64) -> PotentialSpec {
        let mut entries = [
            ScalarField::zero(),
            ScalarField::zero(),
            ScalarField::zero(),
            ScalarField::zero(),
        ];
        entries[entry] = ScalarField::raised_cosine(amp, center, half_width);
        PotentialSpec {
            entries,
            support_radius: center + half_width,
            family: FamilyTag::General,
        }
    }

    /// Table potential from uniform samples per entry; the commuting tag is
    /// decided by sampling with tolerance 1e−12.
    pub fn from_tables(x0: f64, h: f64, samples: [&[C64]; 4], support_radius: f64) -> PotentialSpec {
        let entries = [
            ScalarField::from_samples(x0, h, samples[0]),
            ScalarField::from_samples(x0, h, samples[1]),
            ScalarField::from_samples(x0, h, samples[2]),
            ScalarField::from_samples(x0, h, samples[3]),
        ];
        let mut p = PotentialSpec {
            entries,
            support_radius,
            family: FamilyTag::General,
        };
        let x_end = x0 + (samples[0].len() - 1) as f64 * h;
        if p.is_commuting_sampled(x_end, 257) {
            p.family = FamilyTag::Commuting;
        }
        p
    }

    #[inline]
    pub fn eval(&self, x: f64) -> Mat2 {
        Mat2::new(
            (self.entries[0].f)(x),
            (self.entries[1].f)(x),
            (self.entries[2].f)(x),
            (self.entries[3].f)(x),
        )
    }

    #[inline]
    pub fn eval_deriv(&self, x: f64) -> Mat2 {
        Mat2::new(
            (self.entries[0].df)(x),
            (self.entries[1].df)(x),
            (self.entries[2].df)(x),
            (self.entries[3].df)(x),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.family == FamilyTag::Zero
    }

    /// Sampled check of `p11 ≡ p22`, `p12 ≡ p21` on `[0, x_max]`.
    pub fn is_commuting_sampled(&self, x_max: f64, n: usize) -> bool {
        let mut scale = 0.0f64;
        let mut resid = 0.0f64;
        for k in 0..n {
            let x = x_max * k as f64 / (n - 1) as f64;
            let p = self.eval(x);
            scale = scale.max(p.norm_inf());
            resid = resid
                .max((p.m[0] - p.m[3]).norm())
                .max((p.m[1] - p.m[2]).norm());
        }
        resid <= 1e-12 * (1.0 + scale)
    }

    pub fn is_commuting(&self) -> bool {
        matches!(self.family, FamilyTag::Zero | FamilyTag::Commuting)
    }

    /// Largest entry magnitude sampled on `[0, x_max]` (growth-bound input).
    pub fn entry_sum_max(&self, x_max: f64, n: usize) -> f64 {
        let mut m = 0.0f64;
        for k in 0..=n {
            let x = x_max * k as f64 / n as f64;
            let p = self.eval(x);
            m = m.max(p.m.iter().map(|z| z.norm()).sum());
        }
        m
    }
}

/// Entry map `(k,l) ↦ −conj(p_{lk})`: the potential of the adjoint-side
/// problems. Applying it twice returns the original potential.
pub fn adjoint_potential(p: &PotentialSpec) -> PotentialSpec {
    let entries = [
        p.entries[0].negate_conj(),
        p.entries[2].negate_conj(),
        p.entries[1].negate_conj(),
        p.entries[3].negate_conj(),
    ];
    PotentialSpec {
        entries,
        support_radius: p.support_radius,
        family: p.family,
    }
}

/// Quadrature tolerance for the entry-sum antiderivatives.
pub const THETA_TOL: f64 = 1e-12;

enum ThetaEval {
    Closed(DynField),
    Cached {
        h: f64,
        table: Vec<C64>,
        integrand: DynField,
    },
}

impl ThetaEval {
    fn build(fields: [(&ScalarField, f64); 4], x_max: f64) -> Result<ThetaEval> {
        // Closed form when every contributing entry has an antiderivative.
        if fields.iter().all(|(s, _)| s.antideriv.is_some()) {
            let parts: Vec<(DynField, f64)> = fields
                .iter()
                .map(|(s, sign)| (s.antideriv.clone().unwrap(), *sign))
                .collect();
            let f: DynField = Arc::new(move |x: f64| {
                let mut acc = C64::new(0.0, 0.0);
                for (a, sign) in &parts {
                    acc += a(x) * *sign;
                }
                acc * 0.5
            });
            return Ok(ThetaEval::Closed(f));
        }
        let parts: Vec<(DynField, f64)> = fields
            .iter()
            .map(|(s, sign)| (s.f.clone(), *sign))
            .collect();
        let integrand: DynField = Arc::new(move |x: f64| {
            let mut acc = C64::new(0.0, 0.0);
            for (g, sign) in &parts {
                acc += g(x) * *sign;
            }
            acc * 0.5
        });
        let n = 4096usize;
        let h = x_max / n as f64;
        let mut table = Vec::with_capacity(n + 1);
        let mut acc = C64::new(0.0, 0.0);
        table.push(acc);
        for k in 0..n {
            acc += adaptive_simpson(&*integrand, k as f64 * h, (k + 1) as f64 * h, THETA_TOL)?;
            table.push(acc);
        }
        Ok(ThetaEval::Cached { h, table, integrand })
    }

    fn eval(&self, x: f64) -> Result<C64> {
        match self {
            ThetaEval::Closed(f) => Ok(f(x)),
            ThetaEval::Cached { h, table, integrand } => {
                let k = ((x / h).floor() as usize).min(table.len() - 1);
                let xk = k as f64 * h;
                if (x - xk).abs() < 1e-15 {
                    return Ok(table[k]);
                }
                Ok(table[k] + adaptive_simpson(&**integrand, xk, x, THETA_TOL)?)
            }
        }
    }
}

/// Antiderivative pair of the entry sums of two potentials, with the gauge
/// matrix built from them. Caches are constructed once and read concurrently.
pub struct ThetaPair {
    t1: ThetaEval,
    t2: ThetaEval,
}

impl ThetaPair {
    pub fn new(p1: &PotentialSpec, p2: &PotentialSpec, x_max: f64) -> Result<ThetaPair> {
        let t1 = ThetaEval::build(
            [
                (&p2.entries[1], 1.0),
                (&p2.entries[2], 1.0),
                (&p1.entries[1], -1.0),
                (&p1.entries[2], -1.0),
            ],
            x_max,
        )?;
        let t2 = ThetaEval::build(
            [
                (&p2.entries[0], 1.0),
                (&p2.entries[3], 1.0),
                (&p1.entries[0], -1.0),
                (&p1.entries[3], -1.0),
            ],
            x_max,
        )?;
        Ok(ThetaPair { t1, t2 })
    }

    pub fn theta1(&self, x: f64) -> Result<C64> {
        self.t1.eval(x)
    }

    pub fn theta2(&self, x: f64) -> Result<C64> {
        self.t2.eval(x)
    }

    /// `exp(−θ1)·[[cosh θ2, −sinh θ2], [−sinh θ2, cosh θ2]]` at `x`.
    pub fn r_matrix(&self, x: f64) -> Result<Mat2> {
        let th1 = self.theta1(x)?;
        let th2 = self.theta2(x)?;
        Ok(r_from_thetas(th1, th2))
    }

    /// The swapped-argument factor (the exact inverse of [`Self::r_matrix`]).
    pub fn r_matrix_swapped(&self, x: f64) -> Result<Mat2> {
        let th1 = self.theta1(x)?;
        let th2 = self.theta2(x)?;
        Ok(r_from_thetas(-th1, -th2))
    }
}

#[inline]
pub fn r_from_thetas(theta1: C64, theta2: C64) -> Mat2 {
    let e = (-theta1).exp();
    let ch = theta2.cosh() * e;
    let sh = theta2.sinh() * e;
    Mat2::new(ch, -sh, -sh, ch)
}

/// One-shot `(θ1, θ2)` at `x` for a potential pair.
pub fn theta_pair_at(p1: &PotentialSpec, p2: &PotentialSpec, x: f64) -> Result<(C64, C64)> {
    let tp = ThetaPair::new(p1, p2, x.max(1e-9))?;
    Ok((tp.theta1(x)?, tp.theta2(x)?))
}

/// One-shot gauge matrix at `x` for a potential pair.
pub fn r_matrix_at(p1: &PotentialSpec, p2: &PotentialSpec, x: f64) -> Result<Mat2> {
    let (t1, t2) = theta_pair_at(p1, p2, x)?;
    Ok(r_from_thetas(t1, t2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn adjoint_of_zero_and_constant() {
        let z = adjoint_potential(&PotentialSpec::zero());
        assert!(z.eval(0.7).norm_inf() == 0.0);
        // P = [[0, i],[0, 0]] constant → [[0, 0],[i, 0]]
        let mut p = PotentialSpec::zero();
        p.entries[1] = ScalarField::constant(c(0.0, 1.0));
        p.family = FamilyTag::General;
        let a = adjoint_potential(&p);
        let got = a.eval(1.3);
        assert!((got.m[2] - c(0.0, 1.0)).norm() < 1e-15);
        assert!(got.m[0].norm() + got.m[1].norm() + got.m[3].norm() < 1e-15);
    }

    #[test]
    fn adjoint_round_trip_on_gaussian() {
        let p = PotentialSpec::gaussian_bump(2, c(0.4, -0.3), 1.0, 0.25);
        let pp = adjoint_potential(&adjoint_potential(&p));
        for k in 0..100 {
            let x = 2.0 * k as f64 / 99.0;
            assert!((pp.eval(x) - p.eval(x)).norm_inf() < 1e-15);
        }
    }

    #[test]
    fn theta_same_potential_vanishes() {
        let p = PotentialSpec::commuting_bump(c(0.3, 0.0), c(0.2, 0.0), 1.0, 0.5);
        let tp = ThetaPair::new(&p, &p, 2.0).unwrap();
        for &x in &[0.0, 0.4, 1.1, 2.0] {
            assert!(tp.theta1(x).unwrap().norm() < 1e-14);
            assert!(tp.theta2(x).unwrap().norm() < 1e-14);
        }
    }

    #[test]
    fn theta_identity_vs_zero_by_hand() {
        // P1 = E (a=1, b=0 constant), P2 = 0, x = 1: θ1 = 0, θ2 = −1.
        let p1 = PotentialSpec::commuting_constant(c(1.0, 0.0), c(0.0, 0.0));
        let p2 = PotentialSpec::zero();
        let tp = ThetaPair::new(&p1, &p2, 2.0).unwrap();
        assert!(tp.theta1(1.0).unwrap().norm() < 1e-14);
        assert!((tp.theta2(1.0).unwrap() + c(1.0, 0.0)).norm() < 1e-14);
        // And the gauge matrix at x=1: [[cosh 1, sinh 1],[sinh 1, cosh 1]].
        let r = tp.r_matrix(1.0).unwrap();
        assert!((r.m[0].re - 1.0f64.cosh()).abs() < 1e-12);
        assert!((r.m[1].re - 1.0f64.sinh()).abs() < 1e-12);
        assert!((r.m[0].re - 1.54308).abs() < 1e-5);
        assert!((r.m[1].re - 1.17520).abs() < 1e-5);
    }

    #[test]
    fn theta_linear_offdiagonal_by_hand() {
        // P1 = 0, P2 with p12 = p21 = s (linear), x = 2: θ1 = 2, θ2 = 0.
        let mut p2 = PotentialSpec::zero();
        let lin = ScalarField {
            f: Arc::new(|x: f64| C64::new(x, 0.0)),
            df: Arc::new(|_| C64::new(1.0, 0.0)),
            antideriv: Some(Arc::new(|x: f64| C64::new(0.5 * x * x, 0.0))),
        };
        p2.entries[1] = lin.clone();
        p2.entries[2] = lin;
        p2.family = FamilyTag::Commuting;
        let p1 = PotentialSpec::zero();
        let tp = ThetaPair::new(&p1, &p2, 2.0).unwrap();
        assert!((tp.theta1(2.0).unwrap() - c(2.0, 0.0)).norm() < 1e-14);
        assert!(tp.theta2(2.0).unwrap().norm() < 1e-14);
    }

    #[test]
    fn r_at_zero_is_identity_and_inverse_pairing() {
        let p1 = PotentialSpec::gaussian_bump(2, c(0.5, 0.1), 1.0, 0.3);
        let p2 = PotentialSpec::commuting_bump(c(0.2, 0.0), c(-0.1, 0.05), 0.8, 0.6);
        let tp = ThetaPair::new(&p1, &p2, 2.0).unwrap();
        assert!((tp.r_matrix(0.0).unwrap() - Mat2::identity()).norm_inf() == 0.0);
        for &x in &[0.3, 1.0, 1.9] {
            let fwd = tp.r_matrix(x).unwrap();
            let bwd = tp.r_matrix_swapped(x).unwrap();
            assert!((fwd * bwd - Mat2::identity()).norm_inf() < 1e-9);
            // det R = exp(−2 θ1)
            let det = fwd.det();
            let want = (tp.theta1(x).unwrap() * -2.0).exp();
            assert!((det - want).norm() < 1e-9);
        }
    }

    #[test]
    fn r_conjugation_symmetry() {
        // R(−conj P1ᵀ, −conj P2ᵀ)(x) = conj(R(P2, P1)(x))
        let p1 = PotentialSpec::gaussian_bump(1, c(0.4, -0.2), 0.9, 0.35);
        let p2 = PotentialSpec::commuting_constant(c(0.1, 0.3), c(0.0, -0.2));
        let lhs_pair = ThetaPair::new(&adjoint_potential(&p1), &adjoint_potential(&p2), 2.0).unwrap();
        let rhs_pair = ThetaPair::new(&p2, &p1, 2.0).unwrap();
        for &x in &[0.0, 0.5, 1.4, 2.0] {
            let lhs = lhs_pair.r_matrix(x).unwrap();
            let rhs = rhs_pair.r_matrix(x).unwrap().conj();
            assert!((lhs - rhs).norm_inf() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn gaussian_quadrature_path_matches_erf_series() {
        // Cached-quadrature θ against a high-resolution reference sum.
        let p1 = PotentialSpec::gaussian_bump(2, c(0.5, 0.0), 1.0, 0.3);
        let p2 = PotentialSpec::zero();
        let tp = ThetaPair::new(&p1, &p2, 2.0).unwrap();
        // θ1(x) = −½ ∫ p21; reference via fine Simpson.
        let n = 20000;
        let h = 1.7 / n as f64;
        let vals: Vec<C64> = (0..=n).map(|k| p1.eval(k as f64 * h).m[2]).collect();
        let reference = crate::quadrature::simpson(&vals, h) * -0.5;
        let got = tp.theta1(1.7).unwrap();
        assert!((got - reference).norm() < 1e-10);
    }

    #[test]
    fn commuting_detection_on_tables() {
        let n = 64;
        let h = 2.0 / n as f64;
        let a: Vec<C64> = (0..=n).map(|k| c((k as f64 * h).sin() * 0.1, 0.0)).collect();
        let b: Vec<C64> = (0..=n).map(|k| c(0.05 * (k as f64 * h), 0.02)).collect();
        let p = PotentialSpec::from_tables(0.0, h, [&a, &b, &b, &a], 2.0);
        assert_eq!(p.family, FamilyTag::Commuting);
        let q = PotentialSpec::from_tables(0.0, h, [&a, &b, &a, &a], 2.0);
        assert_eq!(q.family, FamilyTag::General);
    }
}
