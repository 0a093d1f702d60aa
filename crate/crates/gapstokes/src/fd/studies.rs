//! Multi-solve studies: grid convergence on the closed-form solution and
//! the response to hierarchy residuals across inclusion distances.

use std::sync::Arc;

use rayon::prelude::*;

use super::{
    global_energy, local_energy, solve_w, sup_grad, sup_high_deriv, FieldForcing, Manufactured, NeckGrid,
    NoForcing, SideBc,
};
use crate::correctors::{BoundaryMode, CorrectorHierarchy};
use crate::error::{Error, Result};
use crate::fields::{fiber_points, FieldEvaluator, FIBER_POINTS};
use crate::geometry::NeckProfile;
use crate::verifier::{fit_power_law, RateFit};

/// Grid convergence on [`Manufactured`], plus the zero-forcing solve.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStudy {
    /// `(2 / n, max nodal velocity error)` per grid.
    pub errors: Vec<(f64, f64)>,
    /// `log2` of successive error ratios.
    pub orders: Vec<f64>,
    pub fit: RateFit,
    pub max_divergence: f64,
    /// Largest `|mu E - int f.w| / (mu E)` over the grids.
    pub identity_gap: f64,
    /// Largest nodal value of the zero-forcing solve.
    pub zero_solution: f64,
}

/// Solves the closed-form problem on `n x n` grids for each `n` in `sizes`
/// (each at least [`super::MIN_N2`]) over `|x1| <= 3R/2`.
pub fn manufactured_convergence(profile: &NeckProfile, sizes: &[usize]) -> Result<ConvergenceStudy> {
    if sizes.len() < 2 {
        return Err(Error::input("a convergence study needs at least two grids"));
    }
    let r = 1.5 * profile.r;
    let m = Manufactured::new(profile, r);
    let f = FieldForcing::new(&m.forcing, 1e-12)?;
    let mut errors = Vec::new();
    let (mut max_divergence, mut identity_gap) = (0.0f64, 0.0f64);
    for &n in sizes {
        let g = Arc::new(NeckGrid::new(profile, r, n, n)?);
        let s = solve_w(profile, &f, &SideBc::Zero, &g)?;
        let e = profile.mu * global_energy(&s);
        max_divergence = max_divergence.max(s.max_divergence);
        identity_gap = identity_gap.max((e - s.forcing_work).abs() / e);
        errors.push((g.dxi(), m.max_velocity_error(&s)?));
    }
    let orders = errors.windows(2).map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln()).collect();
    let fit = fit_power_law(&errors, 2, 0.0)?;
    let g = Arc::new(NeckGrid::new(profile, r, sizes[0], sizes[0])?);
    let zero = solve_w(profile, &NoForcing, &SideBc::Zero, &g)?;
    let zero_solution = zero.max_velocity().max(zero.q.iter().fold(0.0, |m, v| m.max(v.abs())));
    Ok(ConvergenceStudy { errors, orders, fit, max_divergence, identity_gap, zero_solution })
}

/// One inclusion distance of [`residual_response`].
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseSample {
    pub eps: f64,
    /// `sup |grad w|` over `|x1| <= R`.
    pub sup_grad: f64,
    pub energy: f64,
    pub identity_gap: f64,
    pub max_divergence: f64,
    /// `sup_fiber |grad v|` of the level-1 first-mode corrector at `x1 = 0`.
    pub corrector_grad: f64,
}

/// Response of the neck to the residual `f^(m+1)` of the first-mode
/// hierarchy with `m = 1`, zero side data.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualResponse {
    pub samples: Vec<ResponseSample>,
    /// Local energy against `delta(z1)` at the smallest `eps`.
    pub local_energy: Vec<(f64, f64)>,
    pub local_fit: RateFit,
    /// `sup |grad^2 w| + |grad q|` over `|x1 - z1| <= delta(z1) / 2` against
    /// `delta(z1)` at the smallest `eps`, for windows that contain cells.
    pub high_deriv: Vec<(f64, f64)>,
    pub high_deriv_fit: RateFit,
    /// Growth of `corrector_grad` in `eps`.
    pub corrector_fit: RateFit,
}

impl ResidualResponse {
    fn spread(v: impl Iterator<Item = f64> + Clone) -> f64 {
        v.clone().fold(0.0, f64::max) / v.fold(f64::INFINITY, f64::min)
    }

    /// `max / min` of `sup |grad w|` over the sweep.
    pub fn sup_grad_spread(&self) -> f64 {
        Self::spread(self.samples.iter().map(|s| s.sup_grad))
    }

    pub fn energy_spread(&self) -> f64 {
        Self::spread(self.samples.iter().map(|s| s.energy))
    }
}

/// Local energies and windowed high-derivative sups against `delta(z1)`.
type WindowSamples = (Vec<(f64, f64)>, Vec<(f64, f64)>);

/// Window centres: `delta(z1)` log-spaced from `3 eps` to `delta(zmax)`, with
/// `zmax <= 0.9 R` and every window inside the grid.
fn local_centres(p: &NeckProfile, count: usize) -> Result<Vec<f64>> {
    // Largest centre whose window stays within |x1| <= 1.45 R.
    let reach = |z: f64| -> Result<f64> { Ok(z + p.delta(z)?) };
    let mut zmax = 0.9 * p.r;
    if reach(zmax)? > 1.45 * p.r {
        let (mut a, mut b) = (0.0, zmax);
        for _ in 0..80 {
            let c = 0.5 * (a + b);
            if reach(c)? <= 1.45 * p.r {
                a = c;
            } else {
                b = c;
            }
        }
        zmax = a;
    }
    let (lo, hi) = (3.0 * p.eps, p.delta(zmax)?);
    if lo >= hi {
        return Err(Error::input(format!("no local-energy windows at eps = {:e}", p.eps)));
    }
    (0..count)
        .map(|k| {
            let target = lo * (hi / lo).powf(k as f64 / (count - 1) as f64);
            // delta grows with |x1| on [0, zmax]; bisect for delta(z) = target.
            let (mut a, mut b) = (0.0, zmax);
            for _ in 0..80 {
                let c = 0.5 * (a + b);
                if p.delta(c)? < target {
                    a = c;
                } else {
                    b = c;
                }
            }
            Ok(0.5 * (a + b))
        })
        .collect()
}

/// Solves the residual problem at every `eps` (largest first) on an
/// `n1 x n2` grid over `|x1| <= 3R/2`; solves run concurrently.
pub fn residual_response(
    profile: &NeckProfile,
    eps: &[f64],
    (n1, n2): (usize, usize),
    tol: f64,
) -> Result<ResidualResponse> {
    if eps.len() < 3 {
        return Err(Error::input("insufficient eps span: need at least three values"));
    }
    let r = 1.5 * profile.r;
    let region = (-profile.r, profile.r);
    let eps_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let runs = eps
        .par_iter()
        .map(|&e| -> Result<(ResponseSample, Option<WindowSamples>)> {
            let p = profile.with_eps(e)?;
            let h = CorrectorHierarchy::build(&p, BoundaryMode::TranslateX1, 2)?;
            let f = FieldForcing::new(h.residual(2), tol)?;
            let g = Arc::new(NeckGrid::new(&p, r, n1, n2)?);
            let s = solve_w(&p, &f, &SideBc::Zero, &g)?;
            let energy = global_energy(&s);
            let local = if e == eps_min {
                let zs = local_centres(&p, 8)?;
                let energy =
                    zs.iter().map(|&z| Ok((p.delta(z)?, local_energy(&s, z)?))).collect::<Result<Vec<_>>>()?;
                let mut high = Vec::new();
                for &z in &zs {
                    let d = p.delta(z)?;
                    match sup_high_deriv(&s, 1, (z - 0.5 * d, z + 0.5 * d)) {
                        Ok(v) => high.push((d, v)),
                        Err(Error::Domain(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
                Some((energy, high))
            } else {
                None
            };
            let v = &h.levels[0].v;
            let grads = [v.u1.d1(), v.u1.d2(), v.u2.d1(), v.u2.d2()];
            let ev = FieldEvaluator::new(&grads.iter().collect::<Vec<_>>(), tol)?;
            let fv = ev.coeffs_at(0.0)?;
            let corrector_grad = fiber_points(&p, 0.0, FIBER_POINTS)?
                .into_iter()
                .map(|y| (0..4).map(|i| fv.value(i, y).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            let sample = ResponseSample {
                eps: e,
                sup_grad: sup_grad(&s, region)?,
                energy,
                identity_gap: (p.mu * energy - s.forcing_work).abs() / (p.mu * energy),
                max_divergence: s.max_divergence,
                corrector_grad,
            };
            Ok((sample, local))
        })
        .collect::<Result<Vec<_>>>()?;
    let (local_energy, high_deriv) = runs.iter().find_map(|r| r.1.clone()).expect("smallest eps is in the list");
    let samples: Vec<ResponseSample> = runs.into_iter().map(|r| r.0).collect();
    let local_fit = fit_power_law(&local_energy, 6, 1.0)?;
    let high_deriv_fit = fit_power_law(&high_deriv, 4, 0.5)?;
    let growth: Vec<(f64, f64)> = samples.iter().map(|s| (s.eps, s.corrector_grad)).collect();
    let corrector_fit = fit_power_law(&growth, 3, 0.9)?;
    Ok(ResidualResponse { samples, local_energy, local_fit, high_deriv, high_deriv_fit, corrector_fit })
}
