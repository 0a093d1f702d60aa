//! Coefficient-matching solves shared by all hierarchies.
//!
//! With `q = k^2 - 1/4 = (x2^2 - 2 mid x2 - c) / delta^2` and
//! `c = (eps + 2 h1)(eps + 2 h2) / 4`, products `A(x1, x2) q` vanish on both
//! walls for every polynomial `A`. The helpers below pick such polynomials
//! so that prescribed source terms cancel and the result stays
//! divergence-free.

use crate::coeff::Coeff;
use crate::fields::{NeckSymbols, PolyField, VectorField2};

/// `c = (eps + 2 h1)(eps + 2 h2) / 4`, so that `q = (x2^2 - 2 mid x2 - c) / delta^2`.
pub(crate) fn wall_product(sym: &NeckSymbols) -> Coeff {
    let e = Coeff::constant(sym.eps());
    let a = &e + &(&sym.h1 * 2.0);
    let b = &e + &(&sym.h2 * 2.0);
    &(&a * &b) * 0.25
}

/// Solves `mu d2^2 (A q) = target` for the polynomial `A` (same degree as
/// the target), top coefficient first.
pub(crate) fn invert_wall(sym: &NeckSymbols, target: &PolyField) -> PolyField {
    let Some(n) = target.degree() else { return PolyField::zero() };
    let d2 = sym.dpow(2);
    let two_mid = &sym.mid * 2.0;
    let c = wall_product(sym);
    let mut a = vec![Coeff::zero(); n + 3];
    for j in (0..=n).rev() {
        let lead = &(&d2 * &target.coeff(j)) * (1.0 / (sym.mu() * ((j + 1) * (j + 2)) as f64));
        a[j] = Coeff::sum([lead, &two_mid * &a[j + 1], &c * &a[j + 2]]);
    }
    a.truncate(n + 1);
    PolyField::new(a)
}

/// Given `A`, finds `B` (one degree higher) with
/// `d1(A q) + d2(B q) = leftover(x1)` and returns `(B, leftover)`.
pub(crate) fn complement(sym: &NeckSymbols, a: &PolyField, q: &PolyField) -> (PolyField, Coeff) {
    let d = (a * q).d1();
    let Some(top) = d.degree() else { return (PolyField::zero(), Coeff::zero()) };
    let d2 = sym.dpow(2);
    let two_mid = &sym.mid * 2.0;
    let c = wall_product(sym);
    // B has degree top - 1; two zero guards above it.
    let mut b = vec![Coeff::zero(); top + 2];
    for j in (1..=top).rev() {
        let lead = &(&d2 * &d.coeff(j)) * (-1.0 / (j + 1) as f64);
        b[j - 1] = Coeff::sum([lead, &two_mid * &b[j], &c * &b[j + 1]]);
    }
    let leftover = &d.coeff(0)
        - &(&sym.dpow(-2) * &(&(&two_mid * &b[0]) + &(&c * &b[1])));
    b.truncate(top);
    (PolyField::new(b), leftover)
}

/// Pure-`x1` correction removing a leftover divergence `rem(x1)`.
pub(crate) struct FluxFix {
    /// Multiplies `q` in the first component.
    pub first: Coeff,
    /// Multiplies `q` in the second component.
    pub second: PolyField,
    /// Pure pressure whose `x1`-derivative balances `mu d2^2(first q)`.
    pub pressure: Coeff,
}

/// The flux of `(F q, *)` through a fiber is `-delta F / 6`, so
/// `F = 6 int_0^x1 delta rem / delta` makes the total divergence vanish once
/// the second component is completed by [`complement`].
pub(crate) fn flux_fix(sym: &NeckSymbols, rem: &Coeff, q: &PolyField) -> FluxFix {
    if rem.is_zero() {
        return FluxFix { first: Coeff::zero(), second: PolyField::zero(), pressure: Coeff::zero() };
    }
    let first = &sym.integral_from_origin(&sym.delta * rem) * &(&sym.dpow(-1) * 6.0);
    let (second, _) = complement(sym, &PolyField::constant(first.clone()), q);
    let pressure = sym.integral_from_origin(&(&first * &sym.dpow(-2)) * (2.0 * sym.mu()));
    FluxFix { first, second, pressure }
}

/// One generic correction step: a wall-vanishing, divergence-free field
/// `v` with `mu d2^2 v1 = -target + d1 p` where `p` is the returned pure
/// pressure.
pub(crate) struct Step {
    pub v: VectorField2,
    pub pressure: Coeff,
}

pub(crate) fn cancel_first_component(sym: &NeckSymbols, target: &PolyField) -> Step {
    let q = sym.q();
    let a = invert_wall(sym, &-target);
    let (b, rem) = complement(sym, &a, &q);
    let fix = flux_fix(sym, &rem, &q);
    let u1 = &(&a + &PolyField::constant(fix.first)) * &q;
    let u2 = &(&b + &fix.second) * &q;
    Step { v: VectorField2::new(u1, u2), pressure: fix.pressure }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldEvaluator;
    use crate::geometry::{NamedProfile, Side};

    fn sym() -> NeckSymbols {
        NeckSymbols::new(&NamedProfile::AsymQuadratic.profile(0.01).unwrap())
    }

    #[test]
    fn wall_product_factors_q() {
        let s = sym();
        let c = wall_product(&s);
        let poly = PolyField::new(vec![-c, &s.mid * -2.0, Coeff::one()]).scale(&s.dpow(-2));
        let diff = &poly - &s.q();
        let ev = FieldEvaluator::new(&[&diff], 1e-12).unwrap();
        for (x1, x2) in [(0.0, 0.001), (0.3, -0.02), (-0.7, 0.1)] {
            assert!(ev.eval(x1, x2).unwrap()[0].abs() < 1e-12);
        }
    }

    #[test]
    fn inversion_reproduces_target() {
        let s = sym();
        let t = PolyField::new(vec![s.h1.clone(), Coeff::x1(), s.dpow(-1), s.h2.clone()]);
        let a = invert_wall(&s, &t);
        assert_eq!(a.degree(), Some(3));
        let back = (&a * &s.q()).d2().d2().scale_f(s.mu());
        let diff = &back - &t;
        let ev = FieldEvaluator::new(&[&diff, &t], 1e-12).unwrap();
        for (x1, x2) in [(0.05, 0.001), (0.3, -0.02), (-0.4, 0.05)] {
            let v = ev.eval(x1, x2).unwrap();
            assert!(v[0].abs() <= 1e-10 * (1.0 + v[1].abs()), "{v:?}");
        }
    }

    #[test]
    fn corrected_step_is_divergence_free_and_vanishes_on_walls() {
        let s = sym();
        let t = PolyField::new(vec![&s.h1 * &s.dpow(-2), &s.mid * &s.dpow(-3)]);
        let step = cancel_first_component(&s, &t);
        let div = step.v.divergence();
        let tr = [
            step.v.u1.trace(Side::Top, &s),
            step.v.u1.trace(Side::Bottom, &s),
            step.v.u2.trace(Side::Top, &s),
            step.v.u2.trace(Side::Bottom, &s),
        ];
        let ev = FieldEvaluator::new(&[&div], 1e-12).unwrap();
        let tape = crate::coeff::Tape::compile(&tr).bind(1e-12).unwrap();
        for i in 0..101 {
            let x1 = -0.5 + i as f64 / 100.0;
            for x2 in [-0.005, 0.0, 0.003] {
                assert!(ev.eval(x1, x2).unwrap()[0].abs() < 1e-8);
            }
            for v in tape.eval(x1).unwrap() {
                assert!(v.abs() < 1e-10);
            }
        }
    }
}
