//! Near-contact Stokes corrector hierarchies.
//!
//! Builds explicit corrector fields for Stokes flow in the thin neck between
//! two nearly touching inclusions, checks their residual decay and their
//! blow-up rates numerically, and cross-checks them with a finite-difference
//! Stokes solver on the neck.

// Negated float comparisons are deliberate: they reject NaN. Expression
// nodes hash by their immutable structure, so they are sound map keys.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::mutable_key_type)]

pub mod coeff;
pub mod correctors;
pub mod error;
pub mod fd;
pub mod fields;
pub mod geometry;
pub mod quadrature;
pub mod report;
pub mod sweeps;
pub mod verifier;

pub use coeff::{Coeff, Lower};
pub use error::{Error, Result};
pub use correctors::{BoundaryMode, CorrectorHierarchy, CorrectorLevel};
pub use fields::{PolyField, ScalarPressure, VectorField2};
pub use geometry::{NamedProfile, NeckProfile, ProfileFn, Side};
pub use report::{RateReport, ReportFormat, ReportRow};
pub use verifier::RateFit;
pub use fd::{solve_w, DiscreteSolution, NeckGrid};
pub use sweeps::{RunConfig, CheckKind};
