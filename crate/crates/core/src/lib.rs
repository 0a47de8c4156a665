//! Doeblin-type coupling bounds for non-conservative kernel semigroups.
//!
//! A [`KernelSemigroup`] is a discretized family `M_{s,t}` acting on grid
//! functions to the right and on measures to the left. On top of it this
//! crate builds the auxiliary conservative semigroup, coupling certificates,
//! capacities and ergodic bounds, together with the concrete models:
//! renewal, periodic renewal, diffusion with killing and creation, and
//! renewal with a growing maximal age.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod age;
pub mod branching;
pub mod certificate;
pub mod convergence;
pub mod diffusion;
pub mod error;
pub mod maxage;
pub mod measures;
pub mod periodic;
pub mod renewal;
pub mod report;
pub mod semigroup;
pub mod verify;

pub use certificate::{capacity, certify_admissible, doeblin_constant, AdmissibilityReport, CouplingCertificate};
pub use error::{Error, Result};
pub use measures::{pair, tv_norm, Atom, Grid, GridFunction, HybridMeasure};
pub use report::Check;
pub use semigroup::{apply, mass, propagate, KernelSemigroup, MassFunction, MatrixSemigroup};
