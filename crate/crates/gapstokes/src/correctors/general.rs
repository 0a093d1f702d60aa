//! The general construction, valid for arbitrary wall profiles.

use super::solve::cancel_first_component;
use super::{check_degrees, BoundaryMode, CorrectorLevel, Pending};
use crate::coeff::Coeff;
use crate::error::Result;
use crate::fields::{NeckSymbols, PolyField, ScalarPressure, VectorField2};

fn half() -> PolyField {
    PolyField::constant(Coeff::constant(0.5))
}

fn d11(f: &PolyField) -> PolyField {
    f.d1().d1()
}

fn d22(f: &PolyField) -> PolyField {
    f.d2().d2()
}

pub(super) fn first_level(sym: &NeckSymbols, mode: BoundaryMode) -> Result<CorrectorLevel> {
    let level = match mode {
        BoundaryMode::TranslateX1 => first_translate_x1(sym),
        BoundaryMode::TranslateX2 => first_translate_x2(sym),
        BoundaryMode::Rotate => first_rotate(sym),
    };
    check_degrees(&level.residual, 1, mode.residual_degrees(1))?;
    Ok(level)
}

fn first_translate_x1(sym: &NeckSymbols) -> CorrectorLevel {
    let mu = sym.mu();
    let k = sym.k();
    let q = sym.q();
    let dk = k.d1();
    let (dh1, dh2) = (sym.h1.diff(), sym.h2.diff());

    let f = &(&sym.mid * &sym.dpow(-1)) * -6.0;
    let g = &(&k.scale(&(&dh1 - &dh2)) + &PolyField::constant(&(&dh1 + &dh2) * 0.5))
        + &dk.scale(&(&sym.mid * 6.0));
    let u1 = &(&k + &half()) + &q.scale(&f);
    let u2 = &g * &q;

    let pure = &sym.integral_from_edge(&sym.mid * &sym.dpow(-3)) * (-12.0 * mu);
    let pbar = ScalarPressure::new(u2.d2().scale_f(mu), pure);

    let f1 = (&u1.d1() - &u2.d2()).d1().scale_f(mu);
    let f2 = d11(&u2).scale_f(mu);
    CorrectorLevel {
        mode: BoundaryMode::TranslateX1,
        level: 1,
        v: VectorField2::new(u1, u2),
        pbar,
        residual: VectorField2::new(f1, f2),
        pending: Pending::Whole,
    }
}

fn first_translate_x2(sym: &NeckSymbols) -> CorrectorLevel {
    let mu = sym.mu();
    let k = sym.k();
    let q = sym.q();
    let dk = k.d1();
    let x = Coeff::x1();

    // A first field carrying the boundary data, then a correction that
    // removes the leading part of its first residual component.
    let lead = &(&x * &sym.dpow(-1)) * 6.0;
    let u1t = q.scale(&lead);
    let bracket = &k.scale_f(-2.0) - &dk.scale(&(&x * 6.0));
    let u2t = &(&k + &half()) + &(&bracket * &q);
    let pure_t = &sym.integral_from_edge(&x * &sym.dpow(-3)) * (12.0 * mu);
    let poly_t = u2t.d2().scale_f(mu);
    let comp1 = (&u1t.d1() - &u2t.d2()).d1().scale_f(mu);

    let step = cancel_first_component(sym, &comp1);
    let new_comp1 = d11(&step.v.u1).scale_f(mu);
    let lead2 = &d11(&u2t).scale_f(mu) + &d22(&step.v.u2).scale_f(mu);
    let carry2 = d11(&step.v.u2).scale_f(mu);

    let v = &VectorField2::new(u1t, u2t) + &step.v;
    let pbar = ScalarPressure::new(poly_t, &pure_t + &step.pressure);
    CorrectorLevel {
        mode: BoundaryMode::TranslateX2,
        level: 1,
        v,
        pbar,
        residual: VectorField2::new(new_comp1.clone(), &lead2 + &carry2),
        pending: Pending::Vertical { comp1: new_comp1, lead2, carry2 },
    }
}

fn first_rotate(sym: &NeckSymbols) -> CorrectorLevel {
    let mu = sym.mu();
    let eps = sym.eps();
    let k = sym.k();
    let q = sym.q();
    let dk = k.d1();
    let x = Coeff::x1();
    let x2 = PolyField::x2();
    let x_sq3 = &(&x * &x) * 3.0;
    let diff_h = &sym.h1 - &sym.h2;
    let sum_h = &sym.h1 + &sym.h2;
    let kp = &k + &half();

    let base1 = &x2 * &kp;
    let base2 = kp.scale(&-&x);

    // Wall-vanishing parts: a pure-x1 piece of the first multiplier, the
    // x2-dependent rest, and the two pieces of the second multiplier.
    let f_pure = &Coeff::one() - &(&(&sum_h + &x_sq3) * &sym.dpow(-1));
    let f_rest = &x2.scale(&(&(&diff_h * &sym.dpow(-1)) * -1.5)) - &(&k * &x2).scale_f(5.0);
    let g_r = &k.scale(&(&x * 2.0)) - &dk.scale(&(&Coeff::constant(eps) - &x_sq3));
    let g_rest = &(&(&k * &dk) * &x2).scale(&(&sym.delta * 3.0))
        + &(&dk * &x2).scale(&(&diff_h * 1.5));

    let u1 = &(&base1 + &q.scale(&f_pure)) + &(&f_rest * &q);
    let u2 = &(&base2 + &(&g_rest * &q)) + &(&g_r * &q);

    let r = (&g_r * &q).d2().scale_f(mu);
    let dsum = &sym.h1.diff() + &sym.h2.diff();
    let integrand = &(&(&(&x * 2.0) * &dsum) - &sum_h) - &(&x * &x) * 3.0;
    let pure = &(&(&x * &sym.dpow(-2)) * (2.0 * mu))
        + &(&sym.integral_from_edge(&integrand * &sym.dpow(-3)) * (2.0 * mu));
    let pbar = ScalarPressure::new(r.clone(), pure);

    // Terms of order 1/delta in the first component and 1/sqrt(delta) in
    // the second are cancelled by the next level; the rest is carried.
    let pure_q = q.scale(&f_pure);
    let rest_q = &f_rest * &q;
    let gr_q = &g_r * &q;
    let grest_q = &g_rest * &q;
    let lead1 = &(&(&d22(&base1) + &d22(&rest_q)) + &d11(&pure_q)).scale_f(mu) - &r.d1();
    let lead2 = (&d22(&grest_q) + &d11(&(&base2 + &gr_q))).scale_f(mu);
    let carry1 = d11(&(&base1 + &rest_q)).scale_f(mu);
    let carry2 = d11(&grest_q).scale_f(mu);
    CorrectorLevel {
        mode: BoundaryMode::Rotate,
        level: 1,
        v: VectorField2::new(u1, u2),
        pbar,
        residual: VectorField2::new(&lead1 + &carry1, &lead2 + &carry2),
        pending: Pending::Rotation { lead1, lead2, carry1, carry2 },
    }
}

pub(super) fn next_level(sym: &NeckSymbols, prev: &CorrectorLevel) -> Result<CorrectorLevel> {
    let mu = sym.mu();
    let level = prev.level + 1;
    let (v, pbar, residual, pending) = match &prev.pending {
        Pending::Whole => {
            let f = &prev.residual;
            let step = cancel_first_component(sym, &f.u1);
            let p_poly = (&f.u2 + &d22(&step.v.u2).scale_f(mu)).integrate_x2();
            let comp1 = &d11(&step.v.u1).scale_f(mu) - &p_poly.d1();
            let comp2 = d11(&step.v.u2).scale_f(mu);
            let pbar = ScalarPressure::new(p_poly, step.pressure);
            (step.v, pbar, VectorField2::new(comp1, comp2), Pending::Whole)
        }
        Pending::Vertical { comp1, lead2, carry2 } => {
            let p_poly = lead2.integrate_x2();
            let step = cancel_first_component(sym, &(comp1 - &p_poly.d1()));
            let new_comp1 = d11(&step.v.u1).scale_f(mu);
            let new_lead2 = carry2 + &d22(&step.v.u2).scale_f(mu);
            let new_carry2 = d11(&step.v.u2).scale_f(mu);
            let pbar = ScalarPressure::new(p_poly, step.pressure);
            let residual = VectorField2::new(new_comp1.clone(), &new_lead2 + &new_carry2);
            let pending =
                Pending::Vertical { comp1: new_comp1, lead2: new_lead2, carry2: new_carry2 };
            (step.v, pbar, residual, pending)
        }
        Pending::Rotation { lead1, lead2, carry1, carry2 } => {
            let step = cancel_first_component(sym, lead1);
            let p_poly = (lead2 + &d22(&step.v.u2).scale_f(mu)).integrate_x2();
            let comp1 = &(carry1 + &d11(&step.v.u1).scale_f(mu)) - &p_poly.d1();
            let comp2 = carry2 + &d11(&step.v.u2).scale_f(mu);
            let pbar = ScalarPressure::new(p_poly, step.pressure);
            (step.v, pbar, VectorField2::new(comp1, comp2), Pending::Whole)
        }
        Pending::Kernel => unreachable!("kernel levels are built by the kernel construction"),
    };
    check_degrees(&residual, level, prev.mode.residual_degrees(level))?;
    Ok(CorrectorLevel { mode: prev.mode, level, v, pbar, residual, pending })
}
