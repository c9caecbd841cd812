//! Error taxonomy shared by all modules.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum CoreError {
    #[error("matrix is numerically singular (|det| = {det_norm:.3e})")]
    SingularMatrix { det_norm: f64 },

    #[error("projector constraint violated: {constraint} (residual {residual:.3e})")]
    NotAdmissible { constraint: String, residual: f64 },

    #[error("quadrature failed to reach tolerance {tol:.3e} within budget ({context})")]
    QuadratureFailure { tol: f64, context: String },

    #[error("ODE step error estimate {estimate:.3e} exceeds per-step budget {budget:.3e} at x = {x}")]
    StepTooLarge { estimate: f64, budget: f64, x: f64 },

    #[error("inverse-solution drift: max |phi psi - E| = {drift:.3e} exceeds 1e-6 (step too coarse)")]
    InverseDrift { drift: f64 },

    #[error("diagonal data violates the [[m,n],[-n,-m]] structure (residual {residual:.3e} at x = {x})")]
    StructureViolation { residual: f64, x: f64 },

    #[error("characteristic iteration did not converge: delta = {delta:.3e} after {iterations} sweeps")]
    NoConvergence { delta: f64, iterations: usize },

    #[error("trace relation residual {residual:.3e} exceeds 1e-6")]
    TraceRelationViolation { residual: f64 },

    #[error("pairing-kernel routes disagree by {mismatch:.3e} at (x,y)=({x},{y}); routeA={route_a:?}, routeB={route_b:?}")]
    RouteMismatch {
        mismatch: f64,
        x: f64,
        y: f64,
        route_a: Box<crate::algebra::Mat2>,
        route_b: Box<crate::algebra::Mat2>,
    },

    #[error("ill-conditioned diagonal factor in back-substitution (|det| = {det_norm:.3e} at x = {x})")]
    IllConditioned { det_norm: f64, x: f64 },

    #[error("density routes disagree: max node mismatch {mismatch:.3e} exceeds 1e-5")]
    DensityMismatch { mismatch: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid grid: {0}")]
    Grid(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
