//! Cross-module identity checks at reduced grids: the general-potential
//! pipeline collapsing to the free one, exact bilinearity of every route,
//! and the two transform routes coinciding when the potential vanishes.

use num_complex::Complex64 as C64;

use specfun_core::algebra::{Mat2, ProjectorQ, ONE_C};
use specfun_core::potential::PotentialSpec;
use specfun_core::transforms::{phi_transforms, theta_tilde_transform, theta_transform, MatTestFn, RhoGrid};
use specfun_core::verify::{parseval_free, run_theorem2_suite, Theorem2Context};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn test_mats() -> (MatTestFn, MatTestFn) {
    let mf = Mat2::new(c(1.0, 0.2), c(0.3, -0.1), c(-0.2, 0.4), c(0.6, 0.0));
    let mg = Mat2::new(c(0.7, -0.3), c(0.1, 0.2), c(0.4, 0.0), c(-0.5, 0.3));
    (MatTestFn::bump(0.05, 0.45, mf), MatTestFn::bump(0.1, 0.5, mg))
}

#[test]
fn phi_transforms_match_free_transforms_for_zero_potential() {
    let p = PotentialSpec::zero();
    let q = ProjectorQ::diag_10();
    let (f, g) = test_mats();
    let grid = RhoGrid::new(30.0, 0.25).unwrap();
    let h = 2e-3;
    let (phi_f, phit_g) = phi_transforms(&f, &g, &p, &q, &grid, h).unwrap();
    let th_f = theta_transform(&f, &q.q, &grid, h);
    let tht_g = theta_tilde_transform(&g, &q.q, &grid, h);
    let mut worst = 0.0f64;
    for i in 0..grid.n_nodes() {
        worst = worst
            .max((phi_f.values[i] - th_f.values[i]).norm_inf())
            .max((phit_g.values[i] - tht_g.values[i]).norm_inf());
    }
    assert!(worst < 1e-8, "transform mismatch {worst}");
    // and the hand value at the indicator: Φ_{Q·1}(ρ) = diag(sin ρ/ρ, 0)
    let ind = MatTestFn::indicator(0.5, q.q);
    let (phi_ind, _) = phi_transforms(&ind, &g, &p, &q, &grid, h).unwrap();
    for i in 0..grid.n_nodes() {
        let rho = grid.rho(i);
        let want = if rho.abs() < 1e-12 {
            0.5
        } else {
            (0.5 * rho).sin() / rho
        };
        // Simpson on the x grid carries a (rho*h)^4 term: ~4e-8 at rho = 30.
        assert!((phi_ind.values[i].m[0] - c(want, 0.0)).norm() < 2e-7);
        assert!(
            phi_ind.values[i].m[1].norm()
                + phi_ind.values[i].m[2].norm()
                + phi_ind.values[i].m[3].norm()
                < 1e-9
        );
    }
}

#[test]
fn general_pipeline_collapses_to_free_case() {
    // Zero potential: kernels and traces vanish, the triangular factors are
    // the test functions themselves, and all three routes meet the free
    // pairing identity.
    let p = PotentialSpec::zero();
    let q = ProjectorQ::diag_10();
    let sigma = 0.5;
    let h = 2e-3;
    let ctx = Theorem2Context::build(&p, &q, sigma, h, 1e-10).unwrap();
    assert!(ctx.k_field.sup_norm() == 0.0);
    assert!(ctx.traces.j_nodes.iter().all(|m| m.norm_inf() < 1e-14));
    let (f, g) = test_mats();
    let grid = RhoGrid::new(60.0, 0.05).unwrap();
    let suite = run_theorem2_suite(&ctx, &f, &g, &grid).unwrap();
    assert!(suite.parseval.pass, "{}", suite.parseval.render_text());
    // route (ii) with D = Q/π is the free identity: compare reports
    let free = parseval_free(&f, &g, &q, &grid, h);
    assert!(free.pass, "{}", free.render_text());
    for v in &suite.density.d.values {
        let want = q.q.scale_re(1.0 / std::f64::consts::PI);
        assert!((*v - want).norm_inf() < 1e-13);
    }
}

#[test]
fn doubling_the_test_function_doubles_every_route() {
    let p = PotentialSpec::gaussian_bump(2, c(0.4, 0.1), 0.5, 0.15);
    let q = ProjectorQ::diag_10();
    let sigma = 0.5;
    let h = 2.5e-3;
    let ctx = Theorem2Context::build(&p, &q, sigma, h, 1e-10).unwrap();
    let (f, g) = test_mats();
    let grid = RhoGrid::new(20.0, 0.1).unwrap();
    let s1 = run_theorem2_suite(&ctx, &f, &g, &grid).unwrap();
    let f2 = f.scaled(c(2.0, 0.0));
    let s2 = run_theorem2_suite(&ctx, &f2, &g, &grid).unwrap();
    let mut worst = 0.0f64;
    for i in 0..grid.n_nodes() {
        worst = worst.max((s2.sweep.phi_f[i] - s1.sweep.phi_f[i].scale_re(2.0)).norm_inf());
        worst = worst.max((s2.sweep.phit_f[i] - s1.sweep.phit_f[i].scale_re(2.0)).norm_inf());
    }
    for (a, b) in s2.sweep.expan_forward.iter().zip(s1.sweep.expan_forward.iter()) {
        worst = worst.max((*a - b.scale_re(2.0)).norm_inf());
    }
    assert!(worst < 1e-10, "linearity residual {worst}");
    let _ = ONE_C;
}
