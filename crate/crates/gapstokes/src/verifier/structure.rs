//! Exact structural checks: divergence, wall traces, residual degrees, and
//! agreement of the two constructions on identical walls.

use std::sync::Arc;

use crate::coeff::{Coeff, Tape, Wall};
use crate::correctors::{BoundaryMode, CorrectorHierarchy};
use crate::error::Result;
use crate::fields::{fiber_points, PolyField, sup_norm, x1_nodes, FieldEvaluator, FIBER_POINTS, X1_NODES};
use crate::geometry::{NeckProfile, Side};

use super::EVAL_TOL;

/// Bound on `sup |div v|` of a single level.
pub const DIVERGENCE_TOL: f64 = 1e-8;
/// Bound on the wall-trace error of a single level.
pub const TRACE_TOL: f64 = 1e-10;
/// Allowed ratio between residual sup norms of the two constructions.
pub const CROSS_RATIO: f64 = 10.0;

/// `sup |div v_level|` over the sampling grid of the neck.
pub fn divergence_sup(h: &CorrectorHierarchy, level: usize) -> Result<f64> {
    let div = h.levels[level - 1].v.divergence();
    let ev = FieldEvaluator::new(&[&div], EVAL_TOL)?;
    let p = h.profile();
    let mut sup: f64 = 0.0;
    for x1 in x1_nodes(p.r, X1_NODES) {
        let fv = ev.coeffs_at(x1)?;
        for x2 in fiber_points(p, x1, FIBER_POINTS)? {
            sup = sup.max(fv.value(0, x2).abs());
        }
    }
    Ok(sup)
}

/// Largest deviation of a level's wall values from its prescribed data:
/// the rigid motion on the top wall at level 1, zero everywhere else.
pub fn trace_error(h: &CorrectorHierarchy, level: usize) -> Result<f64> {
    let l = &h.levels[level - 1];
    let s = &h.sym;
    let roots = [
        l.v.u1.trace(Side::Top, s),
        l.v.u2.trace(Side::Top, s),
        l.v.u1.trace(Side::Bottom, s),
        l.v.u2.trace(Side::Bottom, s),
    ];
    let tape = Tape::compile(&roots).bind(EVAL_TOL)?;
    let p = h.profile();
    let mut sup: f64 = 0.0;
    for x1 in x1_nodes(p.r, X1_NODES) {
        let v = tape.eval(x1)?;
        let (b1, b2) = if level == 1 {
            h.mode.velocity(x1, p.wall(Side::Top, x1))
        } else {
            (0.0, 0.0)
        };
        sup = sup.max((v[0] - b1).abs()).max((v[1] - b2).abs());
        sup = sup.max(v[2].abs()).max(v[3].abs());
    }
    Ok(sup)
}

/// Structural measurements of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureCheck {
    pub mode: BoundaryMode,
    pub level: usize,
    pub divergence: f64,
    pub trace: f64,
    pub degrees: (Option<usize>, Option<usize>),
    pub expected_degrees: (usize, usize),
}

impl StructureCheck {
    pub fn degrees_match(&self) -> bool {
        self.degrees == (Some(self.expected_degrees.0), Some(self.expected_degrees.1))
    }

    pub fn pass(&self) -> bool {
        self.divergence < DIVERGENCE_TOL && self.trace < TRACE_TOL && self.degrees_match()
    }
}

/// Checks every level of a general-construction hierarchy.
pub fn structure_checks(h: &CorrectorHierarchy) -> Result<Vec<StructureCheck>> {
    (1..=h.depth())
        .map(|l| {
            Ok(StructureCheck {
                mode: h.mode,
                level: l,
                divergence: divergence_sup(h, l)?,
                trace: trace_error(h, l)?,
                degrees: h.residual(l).degrees(),
                expected_degrees: h.mode.residual_degrees(l),
            })
        })
        .collect()
}

/// Comparison of the general and kernel constructions for `TranslateX1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossCheck {
    /// Largest difference of the level-1 fields over the sampling grid.
    pub level1_gap: f64,
    /// Whether the level-1 first components are the same expression after
    /// identifying the two (equal) walls.
    pub level1_identical: bool,
    /// `(level, general sup / kernel sup)` of the cumulative residuals.
    pub residual_ratios: Vec<(usize, f64)>,
}

impl CrossCheck {
    pub fn pass(&self) -> bool {
        self.level1_gap <= 1e-12
            && self
                .residual_ratios
                .iter()
                .all(|&(_, r)| (1.0 / CROSS_RATIO..=CROSS_RATIO).contains(&r))
    }
}

/// Builds both constructions through `levels` and compares them; residual
/// ratios are reported from level 2 on.
pub fn cross_construction(profile: &NeckProfile, levels: usize) -> Result<CrossCheck> {
    let g = CorrectorHierarchy::build(profile, BoundaryMode::TranslateX1, levels)?;
    let k = CorrectorHierarchy::build_symmetric_kernel(profile, levels)?;
    let (a, b) = (&g.levels[0].v, &k.levels[0].v);
    let ev = FieldEvaluator::new(&[&a.u1, &b.u1, &a.u2, &b.u2], EVAL_TOL)?;
    let mut gap: f64 = 0.0;
    for x1 in x1_nodes(profile.r, X1_NODES) {
        let fv = ev.coeffs_at(x1)?;
        for x2 in fiber_points(profile, x1, FIBER_POINTS)? {
            let scale = fv.value(0, x2).abs().max(1.0);
            gap = gap
                .max((fv.value(0, x2) - fv.value(1, x2)).abs() / scale)
                .max((fv.value(2, x2) - fv.value(3, x2)).abs() / scale);
        }
    }
    let sup = |f: &crate::fields::VectorField2| -> Result<f64> {
        Ok(sup_norm(&f.u1, profile, profile.r, EVAL_TOL)?.max(sup_norm(&f.u2, profile, profile.r, EVAL_TOL)?))
    };
    let residual_ratios = (2..=levels)
        .map(|l| Ok((l, sup(g.residual(l))? / sup(k.residual(l))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossCheck { level1_gap: gap, level1_identical: same_on_identical_walls(&a.u1, &b.u1)?, residual_ratios })
}

/// Whether two fields are the same expression once the bottom wall is
/// identified with the top wall: the difference of every coefficient must
/// simplify to zero.
pub(crate) fn same_on_identical_walls(a: &PolyField, b: &PolyField) -> Result<bool> {
    let top = |w: &Arc<Wall>| Arc::new(Wall { side: 1, poly: w.poly.clone(), cap: w.cap });
    let (ca, cb) = (a.coeffs(), b.coeffs());
    let zero = Coeff::zero();
    for j in 0..ca.len().max(cb.len()) {
        let x = ca.get(j).unwrap_or(&zero).map_walls(&top)?;
        let y = cb.get(j).unwrap_or(&zero).map_walls(&top)?;
        if x != y && !Coeff::sum([x, -&y]).is_zero() {
            return Ok(false);
        }
    }
    Ok(true)
}
