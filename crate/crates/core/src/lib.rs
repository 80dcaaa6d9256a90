//! Risk-constrained decentralized LQ control with a local controller behind
//! a noisy sensor and a remote controller fed over a lossy uplink.
//!
//! The pieces, bottom up:
//! - [`model`]: problem data and validation.
//! - [`estimation`]: local Kalman filter, remote estimator, error covariances.
//! - [`riccati`]: coupled backward recursions, finite and stationary.
//! - [`policy`]: control laws and the mean path.
//! - [`evaluation`]: closed-form cost and risk, Monte Carlo estimators.
//! - [`dual`]: multiplier bisection and the optimality certificate.
//! - [`simulate`]: seeded closed-loop simulation.
//!
//! ```
//! use risklq::{fixtures, model, riccati};
//!
//! let m = model::validate(&fixtures::example2()).unwrap();
//! let sol = riccati::solve_finite(&m, 1.0, 5).unwrap();
//! assert_eq!(sol.gains.len(), 6);
//! ```

pub mod dual;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod exec;
pub mod export;
pub mod fixtures;
pub mod linalg;
pub mod model;
pub mod policy;
pub mod riccati;
pub mod simulate;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{validate, SystemModel, ValidatedModel};
