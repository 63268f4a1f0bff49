//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Transcendental root solver did not converge inside its bracket.
    #[error("root solver failed for k={k}, alpha={alpha}: bracket ({lo}, {hi}), residual {residual:e} after {iters} iterations")]
    SolverFailure {
        k: usize,
        alpha: f64,
        lo: f64,
        hi: f64,
        residual: f64,
        iters: usize,
    },

    /// Normalization integral of the bi-orthogonal pair is numerically degenerate.
    #[error("ill-conditioned basis: normalization integral {value:e} for k={k} is degenerate")]
    IllConditionedBasis { k: usize, value: f64 },

    /// Basis evaluator index beyond the built range.
    #[error("basis index {index} beyond built range {built}")]
    IndexOutOfRange { index: usize, built: usize },

    /// Quadrature matrix violates the expected block bidiagonal structure.
    #[error("basis inconsistency: {what} at ({i},{j}) deviates by {deviation:e} (tolerance {tol:e})")]
    BasisInconsistency {
        what: &'static str,
        i: usize,
        j: usize,
        deviation: f64,
        tol: f64,
    },

    /// Sum of the B_k matrices is numerically singular (Kalman rank failure).
    #[error("rank condition violated: {what} (condition number {cond:e})")]
    RankConditionViolated { what: &'static str, cond: f64 },

    /// A square system used by the design is too ill-conditioned to invert.
    #[error("near-singular matrix in {what}: condition number {cond:e}")]
    NearSingular { what: &'static str, cond: f64 },

    /// Discrete lifting operator is singular or resonant at this gamma.
    #[error("gamma={gamma} too small for the lifting problem: {detail} (estimate {estimate:e})")]
    GammaTooSmall {
        gamma: f64,
        detail: &'static str,
        estimate: f64,
    },

    /// Boundary closure row of the space discretization has no usable pivot.
    #[error("singular boundary closure: {0}")]
    SingularClosure(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Simulation norm exceeded the blow-up guard.
    #[error("simulation blow-up at t={t}: norm {norm:e} exceeds {factor:e} x initial norm {initial:e}")]
    BlowUp {
        t: f64,
        norm: f64,
        initial: f64,
        factor: f64,
    },

    /// Rate fitting window contains non-positive norms.
    #[error("non-positive norm in fitting window at t={t}")]
    NonPositiveNorm { t: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
