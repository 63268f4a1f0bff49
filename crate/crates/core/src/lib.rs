//! Boundary stabilization of a one-dimensional heat equation with a nonlocal
//! boundary condition and a delayed boundary input.
//!
//! The plant is
//!
//! ```text
//! y_t = y_xx + c y           on (0, pi),
//! y(t, 0) = u(t - tau),
//! y_x(t, 0) + y_x(t, pi) + alpha y(t, pi) = 0,
//! ```
//!
//! whose generating operator is non-self-adjoint with a Jordan-coupled
//! (non-diagonal) unstable block. The pipeline is:
//!
//! 1. [`spectral`]: eigenvalues/root functions, the Riesz basis `phi_j` and its
//!    bi-orthogonal family `psi_j`, and the boundary traces `l_j = psi_j'(0)`.
//! 2. [`design`]: the finite-dimensional matrices `Lambda`, `L`, `B_k`, `A`, `C`
//!    of the direct-proportional boundary feedback, the Kalman rank test, and
//!    the lifting boundary-value problem cross-check.
//! 3. [`delay`]: matrix exponential, the Volterra delay operator, Neumann-series
//!    and fixed-point evaluation of the predictor variable `U`, and the
//!    backstepping target-system residual.
//! 4. [`pdesim`]: Crank-Nicolson simulator for the open and closed loop, modal
//!    ODE surrogate, and decay-rate estimation.
//! 5. [`verify`]: machine-readable invariant suites over all modules.

pub mod delay;
pub mod design;
pub mod error;
pub mod linsolve;
pub mod pdesim;
pub mod quad;
pub mod spectral;
pub mod verify;

pub use design::{DesignSet, KalmanReport};
pub use delay::{ControlHistory, DelayOperator, NeumannEval};
pub use error::{Error, Result};
pub use pdesim::{Grid, RunArtifacts, SimConfig, Trajectory};
pub use spectral::{BasisPair, Spectrum};
