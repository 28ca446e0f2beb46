//! Quantum cellular automaton realization of the discrete-time totally
//! asymmetric simple exclusion process.
//!
//! * [`model`]: gates, Kraus channels, the sweep and the continuous-time
//!   Lindblad generator.
//! * [`exact`]: dense vectorized density matrices (N ≤ 14).
//! * [`tensor`]: matrix product operators with SVD truncation.
//! * [`classical`]: the classical limit, solved by matrix product ansatz and
//!   checked against a brute-force Markov chain.
//! * [`correlations`]: negativity, PPT moments, local quantum uncertainty and
//!   coherence.

pub mod classical;
pub mod convergence;
pub mod correlations;
pub mod error;
pub mod exact;
pub mod linalg;
pub mod model;
pub mod tensor;

pub use convergence::ConvergenceReport;
pub use error::{Error, Result};
pub use exact::{evolve_to_ness, DensityMatrixState};
pub use model::{ModelParams, Occupation};
pub use tensor::{evolve_mpo_to_ness, MpoState, TruncationPolicy};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
