//! A closed-form Stokes solution on the neck for convergence tests.

use super::{DiscreteSolution, NeckGrid};
use crate::coeff::Coeff;
use crate::error::Result;
use crate::fields::{FieldEvaluator, NeckSymbols, PolyField, ScalarPressure, VectorField2};
use crate::geometry::NeckProfile;

/// Velocity `(d2 psi, -d1 psi)` with stream function
/// `psi = (x1^2 - r^2)^2 (k^2 - 1/4)^2`, pressure `x1 x2`, and the forcing
/// `-mu Lap w + grad p` that they satisfy. The velocity and its gradient
/// vanish on both walls and on `x1 = +-r`.
#[derive(Clone, Debug)]
pub struct Manufactured {
    pub velocity: VectorField2,
    pub pressure: PolyField,
    pub forcing: VectorField2,
}

impl Manufactured {
    pub fn new(profile: &NeckProfile, r: f64) -> Self {
        let sym = NeckSymbols::new(profile);
        let x = Coeff::x1();
        let side = &(&x * &x) + (-r * r);
        let q = sym.q();
        let psi = (&q * &q).scale(&(&side * &side));
        let velocity = VectorField2::new(psi.d2(), -psi.d1());
        let pressure = PolyField::monomial(x, 1);
        let grad_p = ScalarPressure::new(pressure.clone(), Coeff::zero()).gradient();
        let forcing = &velocity.laplacian().scale_f(-profile.mu) + &grad_p;
        Manufactured { velocity, pressure, forcing }
    }

    fn evaluator(&self) -> Result<FieldEvaluator> {
        let v = &self.velocity;
        let (a, b, c, d) = (v.u1.d1(), v.u1.d2(), v.u2.d1(), v.u2.d2());
        FieldEvaluator::new(&[&v.u1, &v.u2, &a, &b, &c, &d], 1e-12)
    }

    /// Largest nodal velocity error of a discrete solution.
    pub fn max_velocity_error(&self, sol: &DiscreteSolution) -> Result<f64> {
        let g = &*sol.grid;
        let ev = self.evaluator()?;
        let mut err: f64 = 0.0;
        for a in 0..=g.n1 {
            let fv = ev.coeffs_at(g.faces[a].x1)?;
            for k in 0..g.rows1() {
                let (_, y) = g.node1(a, k);
                err = err.max((fv.value(0, y) - sol.w1_at(a, k)).abs());
            }
        }
        for c in 0..g.n1 + 2 {
            let fv = ev.coeffs_at(g.column2(c).x1)?;
            for b in 0..g.rows2() {
                let (_, y) = g.node2(c, b);
                err = err.max((fv.value(1, y) - sol.w2_at(c, b)).abs());
            }
        }
        Ok(err)
    }

    /// Largest exact `|grad w|` over the cell centres with `x1` in `region`.
    pub fn sup_grad(&self, grid: &NeckGrid, region: (f64, f64)) -> Result<f64> {
        let ev = self.evaluator()?;
        let mut best: f64 = 0.0;
        for i in 0..grid.n1 {
            let x = grid.centers[i].x1;
            if !(region.0..=region.1).contains(&x) {
                continue;
            }
            let fv = ev.coeffs_at(x)?;
            for j in 0..grid.n2 {
                let (_, y) = grid.cell(i, j);
                let s: f64 = (2..6).map(|f| fv.value(f, y).powi(2)).sum();
                best = best.max(s.sqrt());
            }
        }
        Ok(best)
    }
}
