//! Numerical library for nonsymmetric 2×2 first-order systems on the half
//! line: transformation kernels between boundary problems, explicit gauge
//! factors, windowed spectral densities, and verification of the pairing
//! (Parseval-type) and expansion identities at desk scale.
//!
//! Module map:
//! - [`algebra`]: complex 2×2 arithmetic, the structural matrix `B`, and
//!   degenerate boundary projectors.
//! - [`potential`]: coefficient matrices `P(x)`, entry-sum antiderivatives,
//!   and the gauge factor `R(P1,P2)(x)`.
//! - [`solutions`]: free closed forms and one-step 4th-order integration of
//!   the matrix boundary problems over the spectral-parameter sweep.
//! - [`kernel`]: the characteristic-coordinate solver for the transformation
//!   kernel, edge traces, and the pairing kernel they determine.
//! - [`transforms`]: spectral transforms, mollified densities, and the
//!   windowed spectral density.
//! - [`verify`]: triangular-factor solves, the pairing identities by
//!   independent routes, expansion reconstructions, and reports.
//! - [`acceptance`]: the fixed selftest suite.

pub mod algebra;
pub mod error;
pub mod quadrature;
pub mod potential;
pub mod solutions;
pub mod kernel;
pub mod transforms;
pub mod verify;
pub mod acceptance;

pub use algebra::{validate_projector, Mat2, ProjectorQ};
pub use error::{CoreError, Result};
pub use potential::{adjoint_potential, r_matrix_at, theta_pair_at, PotentialSpec, ThetaPair};
pub use solutions::{
    free_inverse, free_q, free_q_tilde, free_solution, integrate_phi, integrate_phi_tilde,
    inverse_solution, SolutionGrid,
};
pub use kernel::{
    assemble_f, boundary_traces, derive_goursat_data, solve_kernel, KernelBoundary, KernelField,
    TraceFunctions,
};
pub use transforms::{
    density, dn_sigma, omega_eta, phi_transforms, theta_tilde_transform, theta_transform,
    un_sigma, MatTestFn, MatrixSamples, MollifierDelta, RhoGrid, ScalarSamples, VecTestFn,
    WindowSigma,
};
pub use verify::{
    expand_free, expand_theorem1, parseval_free, parseval_theorem1, parseval_theorem2,
    run_theorem2_suite, volterra_solve, volterra_solve_tilde, Theorem2Context,
    VerificationReport,
};
