//! Corrector hierarchies for the three rigid boundary modes.
//!
//! Level 1 of a hierarchy is an explicit divergence-free field carrying the
//! boundary data on the top wall and vanishing on the bottom wall, with a
//! pressure that cancels its most singular Stokes residual. Each further
//! level vanishes on both walls and cancels the leading part of the
//! accumulated residual `mu Lap(sum v) - grad(sum p)`.
//!
//! Residuals are tracked in split form: the part a later level will cancel
//! is kept apart from the parts that are merely carried along. The stored
//! cumulative residual is the sum of the parts; analytically it equals the
//! naive expression, which [`CorrectorHierarchy::naive_residual`] rebuilds
//! for cross-checking.

mod general;
mod green;
pub(crate) mod solve;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::coeff::DagDump;
use crate::error::{Error, Result};
use crate::fields::{stokes_residual, NeckSymbols, PolyField, ScalarPressure, VectorField2};
use crate::geometry::NeckProfile;

pub use green::green_kernel;

/// Highest supported level.
pub const MAX_LEVEL: usize = 6;

/// Which rigid motion is prescribed on the top inclusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryMode {
    /// Unit translation along `x1`.
    TranslateX1,
    /// Unit translation along `x2`.
    TranslateX2,
    /// The rotation field `(x2, -x1)`.
    Rotate,
}

impl BoundaryMode {
    pub const ALL: [BoundaryMode; 3] =
        [BoundaryMode::TranslateX1, BoundaryMode::TranslateX2, BoundaryMode::Rotate];

    pub fn from_alpha(alpha: u8) -> Result<Self> {
        match alpha {
            1 => Ok(BoundaryMode::TranslateX1),
            2 => Ok(BoundaryMode::TranslateX2),
            3 => Ok(BoundaryMode::Rotate),
            _ => Err(Error::input(format!("boundary mode must be 1, 2 or 3, got {alpha}"))),
        }
    }

    pub fn alpha(self) -> u8 {
        match self {
            BoundaryMode::TranslateX1 => 1,
            BoundaryMode::TranslateX2 => 2,
            BoundaryMode::Rotate => 3,
        }
    }

    /// Boundary velocity at `(x1, x2)`.
    pub fn velocity(self, x1: f64, x2: f64) -> (f64, f64) {
        match self {
            BoundaryMode::TranslateX1 => (1.0, 0.0),
            BoundaryMode::TranslateX2 => (0.0, 1.0),
            BoundaryMode::Rotate => (x2, -x1),
        }
    }

    /// Residual degrees `(first, second)` expected after `level`.
    pub fn residual_degrees(self, level: usize) -> (usize, usize) {
        match self {
            BoundaryMode::TranslateX1 => (2 * level, 2 * level + 1),
            BoundaryMode::TranslateX2 => (2 * level + 2, 2 * level + 3),
            BoundaryMode::Rotate => {
                let l = level.max(2);
                (2 * l, 2 * l + 1)
            }
        }
    }
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alpha={}", self.alpha())
    }
}

/// General construction, or the kernel-based one for symmetric necks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Construction {
    General,
    SymmetricKernel,
}

/// How the accumulated residual is split for the next level.
#[derive(Clone, Debug)]
pub(crate) enum Pending {
    /// The next level cancels the first component and absorbs the second
    /// component into its pressure.
    Whole,
    /// The first component is cancelled next; `lead2` is absorbed by the
    /// next pressure before the velocity step and `carry2` is carried.
    Vertical { comp1: PolyField, lead2: PolyField, carry2: PolyField },
    /// After the first rotation level: `lead1` is cancelled next, `lead2`
    /// is absorbed by a pressure, the carries are kept.
    Rotation { lead1: PolyField, lead2: PolyField, carry1: PolyField, carry2: PolyField },
    /// Kernel construction: the next level inverts the first component
    /// between the walls.
    Kernel,
}

/// One level of a hierarchy.
#[derive(Clone, Debug)]
pub struct CorrectorLevel {
    pub mode: BoundaryMode,
    pub level: usize,
    pub v: VectorField2,
    pub pbar: ScalarPressure,
    /// `mu Lap(sum v) - grad(sum p)` through this level.
    pub residual: VectorField2,
    pub(crate) pending: Pending,
}

/// Levels `1..=n` of the corrector construction for one boundary mode.
#[derive(Clone, Debug)]
pub struct CorrectorHierarchy {
    pub sym: NeckSymbols,
    pub mode: BoundaryMode,
    pub construction: Construction,
    pub levels: Vec<CorrectorLevel>,
}

impl CorrectorHierarchy {
    /// Builds levels `1..=levels` with the general construction.
    pub fn build(profile: &NeckProfile, mode: BoundaryMode, levels: usize) -> Result<Self> {
        check_levels(levels)?;
        let sym = NeckSymbols::new(profile);
        let first = general::first_level(&sym, mode)?;
        let mut h = CorrectorHierarchy {
            sym,
            mode,
            construction: Construction::General,
            levels: vec![first],
        };
        while h.levels.len() < levels {
            h.extend()?;
        }
        Ok(h)
    }

    /// Builds the kernel-based hierarchy for `TranslateX1` on a symmetric
    /// neck.
    pub fn build_symmetric_kernel(profile: &NeckProfile, levels: usize) -> Result<Self> {
        check_levels(levels)?;
        if !profile.symmetric {
            return Err(Error::input("the kernel construction needs identical walls"));
        }
        let sym = NeckSymbols::new(profile);
        let first = green::first_level(&sym)?;
        let mut h = CorrectorHierarchy {
            sym,
            mode: BoundaryMode::TranslateX1,
            construction: Construction::SymmetricKernel,
            levels: vec![first],
        };
        while h.levels.len() < levels {
            h.extend()?;
        }
        Ok(h)
    }

    /// Appends the next level.
    pub fn extend(&mut self) -> Result<&CorrectorLevel> {
        let prev = self.levels.last().expect("a hierarchy has at least one level");
        if prev.level >= MAX_LEVEL {
            return Err(Error::input(format!("levels are capped at {MAX_LEVEL}")));
        }
        let next = match self.construction {
            Construction::General => general::next_level(&self.sym, prev)?,
            Construction::SymmetricKernel => green::next_level(&self.sym, prev)?,
        };
        self.levels.push(next);
        Ok(self.levels.last().unwrap())
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn profile(&self) -> &NeckProfile {
        &self.sym.profile
    }

    /// `sum_{l <= upto} v_l`.
    pub fn cumulative_v(&self, upto: usize) -> VectorField2 {
        self.levels[..upto.min(self.levels.len())]
            .iter()
            .fold(VectorField2::zero(), |acc, l| &acc + &l.v)
    }

    /// `sum_{l <= upto} p_l`.
    pub fn cumulative_p(&self, upto: usize) -> ScalarPressure {
        self.levels[..upto.min(self.levels.len())]
            .iter()
            .fold(ScalarPressure::default(), |acc, l| &acc + &l.pbar)
    }

    /// Residual stored at level `upto` (1-based).
    pub fn residual(&self, upto: usize) -> &VectorField2 {
        &self.levels[upto - 1].residual
    }

    /// The residual recomputed directly from the summed fields, without
    /// using any cancellation.
    pub fn naive_residual(&self, upto: usize) -> VectorField2 {
        stokes_residual(&self.cumulative_v(upto), &self.cumulative_p(upto), self.sym.mu())
    }

    /// Coefficients of every level as s-expressions. Shared subexpressions
    /// are listed once as `%k = ...` bindings ahead of the coefficient lines.
    pub fn dump(&self) -> String {
        let mut dag = DagDump::new();
        let mut lines = String::new();
        for l in &self.levels {
            for (name, f) in [("v1", &l.v.u1), ("v2", &l.v.u2), ("p", &l.pbar.poly)] {
                for (j, c) in f.coeffs().iter().enumerate() {
                    lines.push_str(&format!("level {} {name} x2^{j}: {}\n", l.level, dag.add(c)));
                }
            }
            lines.push_str(&format!("level {} p pure: {}\n", l.level, dag.add(&l.pbar.pure)));
        }
        format!("{}{lines}", dag.bindings())
    }
}

fn check_levels(levels: usize) -> Result<()> {
    if levels == 0 || levels > MAX_LEVEL {
        return Err(Error::input(format!("level count must be in 1..={MAX_LEVEL}, got {levels}")));
    }
    Ok(())
}

/// Asserts exact residual degrees and the global degree cap.
pub(crate) fn check_degrees(residual: &VectorField2, level: usize, want: (usize, usize)) -> Result<()> {
    let got = residual.degrees();
    if got != (Some(want.0), Some(want.1)) {
        return Err(Error::Construction(format!(
            "level {level}: residual degrees {got:?}, expected {want:?}"
        )));
    }
    let cap = 2 * level + 3;
    if want.0 > cap || want.1 > cap {
        return Err(Error::Construction(format!("level {level}: degree above cap {cap}")));
    }
    Ok(())
}
