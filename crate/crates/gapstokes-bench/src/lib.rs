//! Shared fixtures for the benchmarks.

use gapstokes::fd::FieldForcing;
use gapstokes::{BoundaryMode, CorrectorHierarchy, NamedProfile, NeckProfile};

/// Identical quadratic walls at distance `eps`.
pub fn sym_profile(eps: f64) -> NeckProfile {
    NamedProfile::SymQuadratic.profile(eps).expect("built-in profile")
}

/// Residual after two first-mode levels, sampled as a forcing.
pub fn residual_forcing(profile: &NeckProfile) -> FieldForcing {
    let h = CorrectorHierarchy::build(profile, BoundaryMode::TranslateX1, 2).expect("hierarchy builds");
    FieldForcing::new(h.residual(2), 1e-10).expect("forcing binds")
}
