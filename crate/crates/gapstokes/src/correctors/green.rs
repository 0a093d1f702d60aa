//! Kernel-based construction for necks with identical walls.
//!
//! With `h1 = h2` the walls sit at `x2 = +-delta/2`, and each level solves
//! `mu d2^2 v1 = -f1` between them with the Dirichlet kernel of `d2^2`,
//! then closes the divergence with `v2 = -int_{-delta/2}^{x2} d1 v1`.
//! Integrating the piecewise-linear kernel against a polynomial source is
//! done exactly: a double antiderivative plus the linear function fixing
//! the two wall values.

use super::{check_degrees, BoundaryMode, CorrectorLevel, Pending};
use crate::coeff::Coeff;
use crate::error::Result;
use crate::fields::{NeckSymbols, PolyField, ScalarPressure, VectorField2};

/// Dirichlet kernel of `d^2/dx2^2` on `[-delta/2, delta/2]`.
pub fn green_kernel(delta: f64, x2: f64, y: f64) -> f64 {
    let h = 0.5 * delta;
    if y <= x2 {
        (y + h) * (x2 - h) / delta
    } else {
        (x2 + h) * (y - h) / delta
    }
}

fn residual_degrees(level: usize) -> (usize, usize) {
    (2 * level - 1, 2 * level)
}

/// `-int_{-delta/2}^{x2} d1 u1`.
fn closing_component(sym: &NeckSymbols, u1: &PolyField) -> PolyField {
    let anti = u1.d1().integrate_x2();
    let bottom = anti.substitute(&(&sym.delta * -0.5));
    -&(&anti - &PolyField::constant(bottom))
}

pub(super) fn first_level(sym: &NeckSymbols) -> Result<CorrectorLevel> {
    let mu = sym.mu();
    let u1 = PolyField::new(vec![Coeff::constant(0.5), sym.dpow(-1)]);
    let u2 = closing_component(sym, &u1);
    let p = PolyField::monomial(&(&sym.delta.diff() * &sym.dpow(-2)) * mu, 1);
    let f1 = &u1.d1().d1().scale_f(mu) - &p.d1();
    let f2 = u2.d1().d1().scale_f(mu);
    let residual = VectorField2::new(f1, f2);
    check_degrees(&residual, 1, residual_degrees(1))?;
    Ok(CorrectorLevel {
        mode: BoundaryMode::TranslateX1,
        level: 1,
        v: VectorField2::new(u1, u2),
        pbar: ScalarPressure::new(p, Coeff::zero()),
        residual,
        pending: Pending::Kernel,
    })
}

pub(super) fn next_level(sym: &NeckSymbols, prev: &CorrectorLevel) -> Result<CorrectorLevel> {
    let mu = sym.mu();
    let level = prev.level + 1;
    let f = &prev.residual;

    let p2 = f.u1.scale_f(-1.0 / mu).integrate_x2().integrate_x2();
    let top = p2.substitute(&(&sym.delta * 0.5));
    let bottom = p2.substitute(&(&sym.delta * -0.5));
    let slope = &(&top - &bottom) * &(&sym.dpow(-1) * -1.0);
    let offset = &(&top + &bottom) * -0.5;
    let u1 = &p2 + &PolyField::new(vec![offset, slope]);
    let u2 = closing_component(sym, &u1);

    let p = (&f.u2 + &u2.d2().d2().scale_f(mu)).integrate_x2();
    let comp1 = &u1.d1().d1().scale_f(mu) - &p.d1();
    let comp2 = u2.d1().d1().scale_f(mu);
    let residual = VectorField2::new(comp1, comp2);
    check_degrees(&residual, level, residual_degrees(level))?;
    Ok(CorrectorLevel {
        mode: BoundaryMode::TranslateX1,
        level,
        v: VectorField2::new(u1, u2),
        pbar: ScalarPressure::new(p, Coeff::zero()),
        residual,
        pending: Pending::Kernel,
    })
}
