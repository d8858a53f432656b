//! A numerical laboratory for the antiferromagnetic q-color model on finite
//! d-ary trees.
//!
//! The crate computes exact Gibbs root marginals under arbitrary leaf
//! boundary conditions two independent ways (exhaustive enumeration and the
//! bottom-up recursion), iterates the pure-boundary ratio map in
//! cancellation-free deviation coordinates, audits the closed-form
//! contraction bounds of the two-step composition, brute-forces the reduced
//! boundary optimization on tiny trees, and extracts the critical power-law
//! constant and the subcritical exponential decay rate at desk scale.
//!
//! Modules:
//! - [`model`]: parameters `(d, q, p)`, derived constants, regime tags.
//! - [`oracle`]: ground truth by exhaustive enumeration; boundary files.
//! - [`recursion`]: linear-time sweeps and the scalar deviation iteration.
//! - [`maps`]: the iteration maps, derivatives, auxiliaries, grid audits.
//! - [`boundary_opt`]: the reduced two-step optimization and its bounds.
//! - [`analysis`]: rate estimators and machine-readable reports.

pub mod analysis;
pub mod boundary_opt;
pub mod error;
pub mod maps;
pub mod model;
pub mod oracle;
pub mod recursion;

pub use error::{Error, Result};
pub use model::{critical_p, ModelParams, Regime};
pub use oracle::{BoundarySpec, Budgets, MarginalVector, RootWeights};
pub use recursion::Deviation;
