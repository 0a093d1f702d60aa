//! Fields on the neck that are polynomials in `x2` with [`Coeff`]
//! coefficients, together with exact differential operators.

use std::ops::{Add, Mul, Neg, Sub};

use crate::coeff::{BoundTape, Coeff, Lower, Tape};
use crate::error::{Error, Result};
use crate::geometry::{NeckProfile, Side};

/// `sum_j coeffs[j] * x2^j`. Trailing symbolic zeros are trimmed.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PolyField {
    coeffs: Vec<Coeff>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X1,
    X2,
}

impl PolyField {
    pub fn new(coeffs: Vec<Coeff>) -> Self {
        let mut f = PolyField { coeffs };
        f.trim();
        f
    }

    pub fn zero() -> Self {
        PolyField { coeffs: Vec::new() }
    }

    /// A field independent of `x2`.
    pub fn constant(c: Coeff) -> Self {
        PolyField::new(vec![c])
    }

    /// The monomial `c * x2^j`.
    pub fn monomial(c: Coeff, j: usize) -> Self {
        let mut v = vec![Coeff::zero(); j];
        v.push(c);
        PolyField::new(v)
    }

    /// The field `x2`.
    pub fn x2() -> Self {
        PolyField::monomial(Coeff::one(), 1)
    }

    fn trim(&mut self) {
        while self.coeffs.last().is_some_and(|c| c.is_zero()) {
            self.coeffs.pop();
        }
    }

    pub fn coeffs(&self) -> &[Coeff] {
        &self.coeffs
    }

    /// Coefficient of `x2^j` (zero beyond the degree).
    pub fn coeff(&self, j: usize) -> Coeff {
        self.coeffs.get(j).cloned().unwrap_or_else(Coeff::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Exact degree in `x2`; `None` for the zero field.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn scale(&self, c: &Coeff) -> PolyField {
        PolyField::new(self.coeffs.iter().map(|a| a * c).collect())
    }

    pub fn scale_f(&self, s: f64) -> PolyField {
        PolyField::new(self.coeffs.iter().map(|a| a * s).collect())
    }

    /// `x1`-derivative: coefficients pass through the symbolic derivative.
    pub fn d1(&self) -> PolyField {
        PolyField::new(self.coeffs.iter().map(Coeff::diff).collect())
    }

    /// `x2`-derivative: the degree drops by one.
    pub fn d2(&self) -> PolyField {
        PolyField::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, c)| c * j as f64)
                .collect(),
        )
    }

    /// `k`-th partial derivative along `axis`.
    pub fn partial(&self, axis: Axis, k: u32) -> PolyField {
        (0..k).fold(self.clone(), |f, _| match axis {
            Axis::X1 => f.d1(),
            Axis::X2 => f.d2(),
        })
    }

    /// Mixed derivative `d1^a d2^b`.
    pub fn mixed(&self, a: u32, b: u32) -> PolyField {
        self.partial(Axis::X2, b).partial(Axis::X1, a)
    }

    /// `x2 -> int_0^x2 self(x1, t) dt`.
    pub fn integrate_x2(&self) -> PolyField {
        let mut v = vec![Coeff::zero()];
        v.extend(self.coeffs.iter().enumerate().map(|(j, c)| c * (1.0 / (j + 1) as f64)));
        PolyField::new(v)
    }

    /// Substitutes `x2 = value(x1)`, giving a coefficient in `x1`.
    pub fn substitute(&self, value: &Coeff) -> Coeff {
        self.coeffs
            .iter()
            .rev()
            .fold(Coeff::zero(), |acc, c| &(&acc * value) + c)
    }

    /// Restriction to a wall of the neck.
    pub fn trace(&self, side: Side, ctx: &NeckSymbols) -> Coeff {
        self.substitute(&ctx.wall(side))
    }

    /// Largest structural size of a coefficient, used in diagnostics.
    pub fn max_coeff_size(&self) -> usize {
        self.coeffs.iter().map(Coeff::size).max().unwrap_or(0)
    }
}

impl Add for &PolyField {
    type Output = PolyField;
    fn add(self, rhs: &PolyField) -> PolyField {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        PolyField::new((0..n).map(|j| &self.coeff(j) + &rhs.coeff(j)).collect())
    }
}

impl Sub for &PolyField {
    type Output = PolyField;
    fn sub(self, rhs: &PolyField) -> PolyField {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        PolyField::new((0..n).map(|j| &self.coeff(j) - &rhs.coeff(j)).collect())
    }
}

impl Mul for &PolyField {
    type Output = PolyField;
    fn mul(self, rhs: &PolyField) -> PolyField {
        if self.is_zero() || rhs.is_zero() {
            return PolyField::zero();
        }
        let n = self.coeffs.len() + rhs.coeffs.len() - 1;
        let mut terms: Vec<Vec<Coeff>> = vec![Vec::new(); n];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                terms[i + j].push(a * b);
            }
        }
        PolyField::new(terms.into_iter().map(Coeff::sum).collect())
    }
}

impl Neg for &PolyField {
    type Output = PolyField;
    fn neg(self) -> PolyField {
        self.scale_f(-1.0)
    }
}

macro_rules! forward_poly {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr for PolyField {
            type Output = PolyField;
            fn $m(self, rhs: PolyField) -> PolyField { (&self).$m(&rhs) }
        }
        impl $tr<&PolyField> for PolyField {
            type Output = PolyField;
            fn $m(self, rhs: &PolyField) -> PolyField { (&self).$m(rhs) }
        }
        impl $tr<PolyField> for &PolyField {
            type Output = PolyField;
            fn $m(self, rhs: PolyField) -> PolyField { self.$m(&rhs) }
        }
    )*};
}
forward_poly!(Add add, Sub sub, Mul mul);

impl Neg for PolyField {
    type Output = PolyField;
    fn neg(self) -> PolyField {
        -&self
    }
}

/// A two-component field `(u1, u2)`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct VectorField2 {
    pub u1: PolyField,
    pub u2: PolyField,
}

impl VectorField2 {
    pub fn new(u1: PolyField, u2: PolyField) -> Self {
        VectorField2 { u1, u2 }
    }

    pub fn zero() -> Self {
        VectorField2::default()
    }

    pub fn divergence(&self) -> PolyField {
        &self.u1.d1() + &self.u2.d2()
    }

    pub fn laplacian(&self) -> VectorField2 {
        VectorField2::new(laplacian(&self.u1), laplacian(&self.u2))
    }

    pub fn scale_f(&self, s: f64) -> VectorField2 {
        VectorField2::new(self.u1.scale_f(s), self.u2.scale_f(s))
    }

    pub fn degrees(&self) -> (Option<usize>, Option<usize>) {
        (self.u1.degree(), self.u2.degree())
    }

    pub fn components(&self) -> [&PolyField; 2] {
        [&self.u1, &self.u2]
    }
}

impl Add for &VectorField2 {
    type Output = VectorField2;
    fn add(self, rhs: &VectorField2) -> VectorField2 {
        VectorField2::new(&self.u1 + &rhs.u1, &self.u2 + &rhs.u2)
    }
}

impl Sub for &VectorField2 {
    type Output = VectorField2;
    fn sub(self, rhs: &VectorField2) -> VectorField2 {
        VectorField2::new(&self.u1 - &rhs.u1, &self.u2 - &rhs.u2)
    }
}

/// Scalar Laplacian of a polynomial field.
pub fn laplacian(f: &PolyField) -> PolyField {
    &f.d1().d1() + &f.d2().d2()
}

/// A pressure `poly(x1, x2) + pure(x1)`; the pure part typically holds
/// integral terms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScalarPressure {
    pub poly: PolyField,
    pub pure: Coeff,
}

impl Default for ScalarPressure {
    fn default() -> Self {
        ScalarPressure { poly: PolyField::zero(), pure: Coeff::zero() }
    }
}

impl ScalarPressure {
    pub fn new(poly: PolyField, pure: Coeff) -> Self {
        ScalarPressure { poly, pure }
    }

    /// The pressure as a single polynomial field (pure part as the
    /// `x2^0` coefficient).
    pub fn as_field(&self) -> PolyField {
        &self.poly + &PolyField::constant(self.pure.clone())
    }

    /// `grad p`; the pure part only enters the first component.
    pub fn gradient(&self) -> VectorField2 {
        VectorField2::new(
            &self.poly.d1() + &PolyField::constant(self.pure.diff()),
            self.poly.d2(),
        )
    }
}

impl Add for &ScalarPressure {
    type Output = ScalarPressure;
    fn add(self, rhs: &ScalarPressure) -> ScalarPressure {
        ScalarPressure::new(&self.poly + &rhs.poly, &self.pure + &rhs.pure)
    }
}

/// `mu * Lap v - grad p`.
pub fn stokes_residual(v: &VectorField2, p: &ScalarPressure, mu: f64) -> VectorField2 {
    &v.laplacian().scale_f(mu) - &p.gradient()
}

/// The neck geometry expressed in the coefficient algebra.
#[derive(Clone, Debug)]
pub struct NeckSymbols {
    pub profile: NeckProfile,
    pub h1: Coeff,
    pub h2: Coeff,
    /// Gap width `eps + h1 + h2`.
    pub delta: Coeff,
    /// Midline `(h1 - h2) / 2`.
    pub mid: Coeff,
    /// Domain of integral nodes, `[-2R, 2R]`.
    pub domain: (f64, f64),
}

impl NeckSymbols {
    pub fn new(profile: &NeckProfile) -> Self {
        let cap = profile.deriv_cap;
        let h1 = Coeff::profile(1, profile.h1.clone(), cap, 0);
        let h2 = Coeff::profile(2, profile.h2.clone(), cap, 0);
        let delta = Coeff::sum([Coeff::constant(profile.eps), h1.clone(), h2.clone()]);
        let mid = &(&h1 - &h2) * 0.5;
        let r2 = 2.0 * profile.r;
        NeckSymbols { profile: profile.clone(), h1, h2, delta, mid, domain: (-r2, r2) }
    }

    pub fn mu(&self) -> f64 {
        self.profile.mu
    }

    pub fn eps(&self) -> f64 {
        self.profile.eps
    }

    /// `delta^n` for any integer `n`.
    pub fn dpow(&self, n: i32) -> Coeff {
        self.delta.powi(n)
    }

    /// Wall position `x2 = +-(eps/2 + h_side)`.
    pub fn wall(&self, side: Side) -> Coeff {
        let half = Coeff::constant(0.5 * self.profile.eps);
        match side {
            Side::Top => &half + &self.h1,
            Side::Bottom => -(&half + &self.h2),
        }
    }

    /// The normalized coordinate `k = (x2 - mid) / delta`.
    pub fn k(&self) -> PolyField {
        let inv = self.dpow(-1);
        PolyField::new(vec![-(&self.mid * &inv), inv])
    }

    /// `q = k^2 - 1/4`, vanishing on both walls.
    pub fn q(&self) -> PolyField {
        let k = self.k();
        &(&k * &k) - &PolyField::constant(Coeff::constant(0.25))
    }

    /// `x1 -> int_0^x1 g`.
    pub fn integral_from_origin(&self, g: Coeff) -> Coeff {
        Coeff::antideriv(Lower::At(0.0), g, self.domain).expect("origin lies in the chart")
    }

    /// `x1 -> int_R^x1 g`, i.e. minus the integral from `x1` to the chart
    /// edge.
    pub fn integral_from_edge(&self, g: Coeff) -> Coeff {
        Coeff::antideriv(Lower::ChartEdge(self.profile.r), g, self.domain)
            .expect("chart edge lies in the chart")
    }
}

/// Evaluates a fixed set of polynomial fields (and plain coefficients)
/// through one compiled tape.
#[derive(Clone, Debug)]
pub struct FieldEvaluator {
    bound: BoundTape,
    /// Start of each field's coefficients among the tape roots.
    offsets: Vec<usize>,
    ncoeffs: usize,
}

impl FieldEvaluator {
    pub fn new(fields: &[&PolyField], tol: f64) -> Result<Self> {
        let mut roots = Vec::new();
        let mut offsets = Vec::with_capacity(fields.len() + 1);
        for f in fields {
            offsets.push(roots.len());
            roots.extend(f.coeffs().iter().cloned());
        }
        offsets.push(roots.len());
        let bound = Tape::compile(&roots).bind(tol)?;
        Ok(FieldEvaluator { bound, offsets, ncoeffs: roots.len() })
    }

    pub fn field_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Coefficient values at `x1`, in field order.
    pub fn coeffs_at(&self, x1: f64) -> Result<FiberValues> {
        let mut scratch = Vec::new();
        let mut vals = vec![0.0; self.ncoeffs];
        self.bound.eval_into(x1, &mut scratch, &mut vals)?;
        Ok(FiberValues { vals, offsets: self.offsets.clone() })
    }

    /// Values of all fields at `(x1, x2)`.
    pub fn eval(&self, x1: f64, x2: f64) -> Result<Vec<f64>> {
        let fv = self.coeffs_at(x1)?;
        Ok((0..self.field_count()).map(|i| fv.value(i, x2)).collect())
    }
}

/// Coefficient values of a set of fields on one vertical fiber.
#[derive(Clone, Debug)]
pub struct FiberValues {
    vals: Vec<f64>,
    offsets: Vec<usize>,
}

impl FiberValues {
    pub fn value(&self, field: usize, x2: f64) -> f64 {
        self.vals[self.offsets[field]..self.offsets[field + 1]]
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x2 + c)
    }

    pub fn coeffs(&self, field: usize) -> &[f64] {
        &self.vals[self.offsets[field]..self.offsets[field + 1]]
    }
}

/// Points per vertical fiber in sup-norm sampling.
pub const FIBER_POINTS: usize = 33;
/// Horizontal nodes in sup-norm sampling over the neck region.
pub const X1_NODES: usize = 201;

/// `n` points from the bottom wall to the top wall at `x1`, endpoints
/// included.
pub fn fiber_points(profile: &NeckProfile, x1: f64, n: usize) -> Result<Vec<f64>> {
    profile.delta(x1)?;
    let top = profile.wall(Side::Top, x1);
    let bottom = profile.wall(Side::Bottom, x1);
    Ok((0..n)
        .map(|i| bottom + (top - bottom) * i as f64 / (n - 1) as f64)
        .collect())
}

/// Horizontal sampling nodes on `[-r, r]`: Chebyshev-Lobatto nodes on each
/// half, so they cluster at `x1 = 0` where the gap is thinnest.
pub fn x1_nodes(r: f64, n: usize) -> Vec<f64> {
    let half = (n.max(3) - 1) / 2;
    let mut v: Vec<f64> = (0..=half)
        .map(|j| 0.5 * r * (1.0 - (std::f64::consts::PI * j as f64 / half as f64).cos()))
        .collect();
    let neg: Vec<f64> = v.iter().skip(1).map(|x| -x).collect();
    v.extend(neg);
    v.sort_by(f64::total_cmp);
    v
}

/// Supremum of `|field|` over the tensor sample grid of `Omega_r`.
pub fn sup_norm(field: &PolyField, profile: &NeckProfile, r: f64, tol: f64) -> Result<f64> {
    if r > 2.0 * profile.r {
        return Err(Error::domain(format!("sampling half-width {r} exceeds the chart")));
    }
    let ev = FieldEvaluator::new(&[field], tol)?;
    let mut sup: f64 = 0.0;
    for x1 in x1_nodes(r, X1_NODES) {
        let fv = ev.coeffs_at(x1)?;
        for x2 in fiber_points(profile, x1, FIBER_POINTS)? {
            sup = sup.max(fv.value(0, x2).abs());
        }
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::NamedProfile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> NeckSymbols {
        NeckSymbols::new(&NamedProfile::AsymQuadratic.profile(0.01).unwrap())
    }

    #[test]
    fn x2_derivative_of_square() {
        let f = PolyField::monomial(Coeff::one(), 2);
        let d = f.d2();
        assert_eq!(d.coeffs(), &[Coeff::zero(), Coeff::constant(2.0)]);
        assert!(f.partial(Axis::X2, 3).is_zero());
    }

    #[test]
    fn solenoidal_examples() {
        assert!(VectorField2::new(PolyField::x2(), PolyField::zero()).divergence().is_zero());
        let v = VectorField2::new(
            PolyField::constant(Coeff::x1()),
            PolyField::monomial(Coeff::constant(-1.0), 1),
        );
        assert!(v.divergence().is_zero());
    }

    #[test]
    fn laplacian_of_x2_squared() {
        let v = VectorField2::new(PolyField::monomial(Coeff::one(), 2), PolyField::zero());
        let l = v.laplacian();
        assert_eq!(l.u1, PolyField::constant(Coeff::constant(2.0)));
        assert!(l.u2.is_zero());
    }

    #[test]
    fn pressure_gradient_of_pure_integral() {
        let c = ctx();
        let g = &c.h1 * &c.dpow(-3);
        let p = ScalarPressure::new(PolyField::zero(), c.integral_from_origin(g.clone()));
        let grad = p.gradient();
        assert_eq!(grad.u1, PolyField::constant(g));
        assert!(grad.u2.is_zero());
    }

    #[test]
    fn keller_traces() {
        let c = ctx();
        let k = c.k();
        let top = (&k + &PolyField::constant(Coeff::constant(0.5))).trace(Side::Top, &c);
        let bottom = (&k + &PolyField::constant(Coeff::constant(0.5))).trace(Side::Bottom, &c);
        let qt = c.q().trace(Side::Top, &c);
        let qb = c.q().trace(Side::Bottom, &c);
        let tape = Tape::compile(&[top, bottom, qt, qb]).bind(1e-10).unwrap();
        for i in 0..1000 {
            let x = -1.0 + 2.0 * i as f64 / 999.0;
            let v = tape.eval(x).unwrap();
            assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
            assert!(v[2].abs() < 1e-12 && v[3].abs() < 1e-12);
        }
    }

    #[test]
    fn k_derivative_matches_geometry() {
        let c = ctx();
        let p = &c.profile;
        let dk = c.k().d1();
        let ev = FieldEvaluator::new(&[&dk], 1e-10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x1: f64 = rng.gen_range(-0.5..0.5);
            let t: f64 = rng.gen_range(-0.5..0.5);
            let x2 = p.delta(x1).unwrap() * t + 0.5 * (p.h1.eval(x1) - p.h2.eval(x1));
            let g = p.keller_grad(x1, x2).unwrap();
            let v = ev.eval(x1, x2).unwrap()[0];
            assert!((v - g.0).abs() <= 1e-8 * g.0.abs().max(1e-12), "{v} vs {}", g.0);
        }
    }

    #[test]
    fn mixed_partials_commute() {
        let c = ctx();
        let f = &(&c.q() * &c.k()) * &c.k();
        let a = f.d1().d2().d2();
        let b = f.d2().d1().d2();
        let ev = FieldEvaluator::new(&[&a, &b], 1e-10).unwrap();
        for x1 in [-0.4, -0.01, 0.0, 0.2] {
            for x2 in [-0.003, 0.0, 0.004] {
                let v = ev.eval(x1, x2).unwrap();
                assert!((v[0] - v[1]).abs() <= 1e-8 * v[0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn evaluation_is_linear() {
        let c = ctx();
        let f = c.q();
        let g = &c.k() * &PolyField::constant(c.h1.clone());
        let comb = &f.scale_f(2.0) - &g.scale_f(3.0);
        let ev = FieldEvaluator::new(&[&f, &g, &comb], 1e-10).unwrap();
        for (x1, x2) in [(0.1, 0.001), (-0.3, 0.02), (0.0, 0.0)] {
            let v = ev.eval(x1, x2).unwrap();
            assert!((v[2] - (2.0 * v[0] - 3.0 * v[1])).abs() <= 1e-12 * (1.0 + v[0].abs() + v[1].abs()));
        }
    }

    #[test]
    fn x1_nodes_cluster_at_origin() {
        let n = x1_nodes(0.25, X1_NODES);
        assert_eq!(n.len(), X1_NODES);
        assert!(n.contains(&0.0));
        assert!((n[0] + 0.25).abs() < 1e-15 && (n[n.len() - 1] - 0.25).abs() < 1e-15);
        assert!(n[101] - n[100] < 1e-4);
    }
}
