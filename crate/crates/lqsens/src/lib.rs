//! Stochastic linear-quadratic control and mean-variance portfolio selection,
//! solved on uniform time grids with Monte-Carlo ensembles, plus adjoint-based
//! first-order sensitivities of the optimal value cross-checked against finite
//! differences.
//!
//! Layering, bottom up:
//! - [`grid`], [`brownian`], [`ito`]: time grids, reproducible Brownian
//!   ensembles, discrete Itô processes and the stochastic-calculus identities
//!   used as test oracles everywhere else.
//! - [`lq`]: the linear-quadratic problem — backward Riccati integration,
//!   closed-loop simulation, adjoint reconstruction, a duality residual, and an
//!   independent Picard fixed-point solver for cross-validation.
//! - [`mv`]: mean-variance portfolio selection — reduction to zero interest
//!   rate, one-asset closed form, and a dual multiplier search built on [`lq`].
//! - [`sens`]: directional derivatives of the optimal value from adjoint
//!   states, with finite-difference checks.
//! - [`config`], [`report`], [`cli`]: JSON-configured batch runs emitting CSV
//!   and JSON reports.
//!
//! Everything stochastic is a pure function of a 64-bit seed and the shape
//! parameters; reruns reproduce results bit for bit.

pub mod brownian;
pub mod cli;
pub mod config;
pub mod grid;
pub mod ito;
pub mod lq;
pub mod mv;
pub mod report;
pub mod sens;
pub mod timefn;

pub use brownian::{sample_brownian, BrownianEnsemble};
pub use grid::{build_grid, TimeGrid};
pub use ito::{inner_product_I, integration_by_parts_residual, ito_evaluate, ItoTriple};
pub use lq::{riccati_integrate, solve_lq, LQSolution, LQSpec};
pub use mv::{solve_closed_form, solve_dual, MVSolution, MVSpec};
pub use sens::{
    dv_additive, dv_lq, dv_lq_mc, dv_mv, dv_mv_mc, fd_check, fd_forward, FdEstimate,
    LQPerturbation, MVPerturbation, Sensitivity, SensitivityStat,
};
pub use timefn::TimeFn;

/// Errors shared by all modules. The CLI maps these onto its exit codes:
/// configuration problems exit 2, solver failures exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("control kernel N + sum_j D_j' P D_j not positive definite at t = {t}")]
    SingularKernel { t: f64 },
    #[error("backward integration failed: {0}")]
    IntegrationFailure(String),
    #[error("fixed-point iteration did not converge after {iters} iterations (last residual {last_residual:.3e})")]
    ConvergenceFailure { iters: usize, last_residual: f64 },
    #[error("volatility not uniformly elliptic: {0}")]
    Ellipticity(String),
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad inputs rather than by a failing solve.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::ShapeMismatch(_)
                | Error::NonFinite(_)
                | Error::Config { .. }
                | Error::Unsupported(_)
        )
    }
}
