//! Slope checks on the corrector hierarchies.
//!
//! Every check reduces to a least-squares fit in log-log space: residual
//! magnitudes against the local gap width, corrector derivatives against
//! the inclusion distance, and the assembled gradient envelope against
//! both.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correctors::{BoundaryMode, CorrectorHierarchy};
use crate::error::{Error, Result};
use crate::fields::{fiber_points, FiberValues, FieldEvaluator, PolyField, FIBER_POINTS};
use crate::geometry::NeckProfile;
use crate::report::{Comparison, ReportRow};

mod structure;

pub use structure::{
    cross_construction, divergence_sup, structure_checks, trace_error, CrossCheck, StructureCheck,
    CROSS_RATIO, DIVERGENCE_TOL, TRACE_TOL,
};

/// Tolerance passed to integral tables during verification.
pub const EVAL_TOL: f64 = 1e-10;
/// Allowed shortfall of a residual decay slope.
pub const RESIDUAL_SLOPE_TOL: f64 = 0.25;
/// Allowed deviation of a blow-up slope.
pub const BLOWUP_SLOPE_TOL: f64 = 0.05;
/// Allowed deviation of an envelope slope.
pub const ENVELOPE_SLOPE_TOL: f64 = 0.1;
/// Default inclusion distances for sweeps in `eps`.
pub const DEFAULT_EPS_SWEEP: [f64; 5] = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];

/// Result of a straight-line fit of `ln(magnitude)` against `ln(scale)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits `magnitude ~ C delta^slope`.
///
/// Needs at least six samples whose `delta` values span at least 1.5
/// decades, and strictly positive magnitudes.
pub fn fit_decay_order(samples: &[(f64, f64)]) -> Result<RateFit> {
    fit_power_law(samples, 6, 1.5)
}

/// Ordinary least squares on `(ln x, ln y)` with configurable minimums.
pub(crate) fn fit_power_law(samples: &[(f64, f64)], min_len: usize, min_decades: f64) -> Result<RateFit> {
    if samples.len() < min_len {
        return Err(Error::input(format!(
            "need at least {min_len} samples for a rate fit, got {}",
            samples.len()
        )));
    }
    for &(x, y) in samples {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::input(format!("nonpositive abscissa {x} in rate fit")));
        }
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::input(format!("nonpositive magnitude {y} in rate fit")));
        }
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)));
    let decades = (hi / lo).log10();
    if decades < min_decades {
        return Err(Error::input(format!(
            "insufficient span: samples cover {decades:.2} decades, need {min_decades}"
        )));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy <= f64::EPSILON * n * my.abs().max(1.0) { 1.0 } else { 1.0 - sse / syy };
    Ok(RateFit { slope, intercept, r2 })
}

/// The horizontal sampling window `x1 in [c sqrt(eps), upper]`, used on both
/// sides of the neck.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub c: f64,
    pub upper: f64,
    pub points: usize,
}

impl Window {
    /// `c = 2`, upper end `R/2`, 24 log-spaced nodes.
    pub fn standard(profile: &NeckProfile) -> Self {
        Window { c: 2.0, upper: 0.5 * profile.r, points: 24 }
    }

    pub fn lower(&self, eps: f64) -> f64 {
        self.c * eps.sqrt()
    }

    /// Log-spaced positive nodes; fails if the window is empty or leaves the
    /// neck.
    pub fn nodes(&self, profile: &NeckProfile) -> Result<Vec<f64>> {
        let lo = self.lower(profile.eps);
        if self.c < 2.0 {
            return Err(Error::input(format!("window constant c = {} is below 2", self.c)));
        }
        if self.upper > profile.r {
            return Err(Error::domain(format!("window end {} exceeds R = {}", self.upper, profile.r)));
        }
        if lo >= self.upper || self.points < 6 {
            return Err(Error::input(format!(
                "window too small at eps = {:e}: [{lo}, {}]",
                profile.eps, self.upper
            )));
        }
        let (a, b) = (lo.ln(), self.upper.ln());
        Ok((0..self.points)
            .map(|i| (a + (b - a) * i as f64 / (self.points - 1) as f64).exp())
            .collect())
    }

    pub fn label(&self, eps: f64) -> String {
        format!("x1 in [{}sqrt(eps), {}], eps={eps:e}", self.c, self.upper)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `b`-th derivative of a polynomial given by increasing coefficients.
fn poly_deriv_eval(c: &[f64], b: usize, x: f64) -> f64 {
    let mut acc = 0.0;
    for j in (b..c.len()).rev() {
        let fall = ((j - b + 1)..=j).fold(1.0, |p, t| p * t as f64);
        acc = acc * x + c[j] * fall;
    }
    acc
}

/// Evaluates Frobenius norms `|grad^s u|` of a set of polynomial fields,
/// for `s` up to a fixed order.
///
/// The `x1`-derivatives are taken symbolically and compiled once; the
/// `x2`-derivatives are taken on the fiber polynomials.
struct TensorSampler {
    eval: FieldEvaluator,
    components: usize,
    max_order: usize,
}

impl TensorSampler {
    fn new(fields: &[&PolyField], max_order: usize) -> Result<Self> {
        let mut derived = Vec::with_capacity(fields.len() * (max_order + 1));
        for f in fields {
            let mut g = (*f).clone();
            for _ in 0..=max_order {
                let next = g.d1();
                derived.push(g);
                g = next;
            }
        }
        let refs: Vec<&PolyField> = derived.iter().collect();
        Ok(TensorSampler {
            eval: FieldEvaluator::new(&refs, EVAL_TOL)?,
            components: fields.len(),
            max_order,
        })
    }

    fn fiber(&self, x1: f64) -> Result<FiberValues> {
        self.eval.coeffs_at(x1)
    }

    /// `sum_a C(s, a) |d1^a d2^(s-a) u|^2` over all components, with the
    /// value of component `i` shifted by `shift[i]` when `s = 0`.
    fn norm_sq(&self, fv: &FiberValues, s: usize, x2: f64, shift: &[f64]) -> f64 {
        debug_assert!(s <= self.max_order);
        let mut total = 0.0;
        for comp in 0..self.components {
            for a in 0..=s {
                let idx = comp * (self.max_order + 1) + a;
                let mut v = poly_deriv_eval(fv.coeffs(idx), s - a, x2);
                if s == 0 {
                    v -= shift.get(comp).copied().unwrap_or(0.0);
                }
                total += binomial(s, a) * v * v;
            }
        }
        total
    }
}

/// Outcome of one residual decay check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualCheck {
    pub m: usize,
    pub s: usize,
    pub fit: RateFit,
    /// `m - s - 1`.
    pub predicted: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Decay of `sup_fiber |grad^s f^(m+1)|` against `delta(x1)` over the window.
pub fn residual_order(h: &CorrectorHierarchy, s: usize, m: usize, window: &Window) -> Result<ResidualCheck> {
    if s > m {
        return Err(Error::input(format!("derivative order s = {s} exceeds m = {m}")));
    }
    residual_orders(h, m, window)?
        .into_iter()
        .nth(s)
        .ok_or_else(|| Error::input("missing derivative order"))
}

/// [`residual_order`] for every `s` in `0..=m`, sharing one evaluation.
pub fn residual_orders(h: &CorrectorHierarchy, m: usize, window: &Window) -> Result<Vec<ResidualCheck>> {
    if m == 0 {
        return Err(Error::input("residual checks start at m = 1"));
    }
    if h.depth() < m + 1 {
        return Err(Error::input(format!(
            "hierarchy has {} levels, residual of level {} requested",
            h.depth(),
            m + 1
        )));
    }
    let profile = h.profile();
    let nodes = window.nodes(profile)?;
    let f = h.residual(m + 1);
    let sampler = TensorSampler::new(&[&f.u1, &f.u2], m)?;
    let xs: Vec<f64> = nodes.iter().flat_map(|&x| [x, -x]).collect();
    let per_x: Vec<(f64, Vec<f64>)> = xs
        .par_iter()
        .map(|&x1| -> Result<(f64, Vec<f64>)> {
            let fv = sampler.fiber(x1)?;
            let pts = fiber_points(profile, x1, FIBER_POINTS)?;
            let sups = (0..=m)
                .map(|s| pts.iter().fold(0.0f64, |acc, &x2| acc.max(sampler.norm_sq(&fv, s, x2, &[]))).sqrt())
                .collect();
            Ok((profile.delta(x1)?, sups))
        })
        .collect::<Result<_>>()?;
    (0..=m)
        .map(|s| {
            let samples: Vec<(f64, f64)> = per_x.iter().map(|(d, v)| (*d, v[s])).collect();
            let fit = fit_decay_order(&samples)?;
            let predicted = m as f64 - s as f64 - 1.0;
            let pass = fit.slope >= predicted - RESIDUAL_SLOPE_TOL;
            Ok(ResidualCheck { m, s, fit, predicted, tolerance: RESIDUAL_SLOPE_TOL, pass })
        })
        .collect()
}

/// Predicted exponent of `eps` for `d1^m d2` of the first component of the
/// level-1 field at `(r sqrt(eps), 0)`.
pub fn blowup_prediction(m: u32) -> f64 {
    -(m as f64 + 2.0) / 2.0
}

/// Growth in `eps` of `|d1^k1 d2^k2 v_component|` at `(r sqrt(eps), 0)`,
/// for the level-1 field of the kernel construction on an identical-wall
/// neck.
///
/// `profile` supplies the walls; its own `eps` is ignored.
pub fn corrector_blowup_order(
    profile: &NeckProfile,
    eps: &[f64],
    order: (u32, u32),
    component: usize,
    r: f64,
) -> Result<RateFit> {
    if !profile.symmetric {
        return Err(Error::input("blow-up rates are measured on identical walls"));
    }
    if component > 1 {
        return Err(Error::input(format!("component index {component} is not 0 or 1")));
    }
    let samples = eps
        .par_iter()
        .map(|&e| -> Result<(f64, f64)> {
            let p = profile.with_eps(e)?;
            let x1 = r * e.sqrt();
            if !(x1.abs() <= p.r) {
                return Err(Error::domain(format!("evaluation point x1 = {x1} lies outside the neck")));
            }
            let h = CorrectorHierarchy::build_symmetric_kernel(&p, 1)?;
            let v = &h.levels[0].v;
            let field = v.components()[component].mixed(order.0, order.1);
            let val = FieldEvaluator::new(&[&field], EVAL_TOL)?.eval(x1, 0.0)?[0];
            Ok((e, val.abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    fit_power_law(&samples, 5, 2.0)
}

/// Settings of the gradient-envelope synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSettings {
    /// Corrector levels summed per mode.
    pub levels: usize,
    /// Evaluation point `x1 = r sqrt(eps)` for the fit in `eps`.
    pub r: f64,
    /// Window for the fit in `delta` at the smallest `eps`.
    pub window: Window,
}

impl EnvelopeSettings {
    pub fn standard() -> Self {
        EnvelopeSettings { levels: 2, r: 0.5, window: Window { c: 2.0, upper: 0.05, points: 24 } }
    }
}

/// Weights of the three modes in the envelope: the size of the difference
/// of the rigid-motion coefficients of the two inclusions. The rotation
/// weight vanishes for identical walls.
pub fn envelope_weights(eps: f64, symmetric: bool) -> [f64; 3] {
    let s = eps.sqrt();
    [s, eps * s, if symmetric { 0.0 } else { s }]
}

/// Predicted `delta`-exponent of the order-`m` envelope.
pub fn envelope_delta_exponent(m: usize, symmetric: bool) -> f64 {
    let k = if symmetric { 2.0 } else { 3.0 };
    -(m as f64 + k) / 2.0
}

/// Predicted `eps`-exponent at `x1 = r sqrt(eps)`, where `delta ~ eps`.
pub fn envelope_eps_exponent(m: usize, symmetric: bool) -> f64 {
    0.5 + envelope_delta_exponent(m, symmetric)
}

/// `E_m(x1) = sum_alpha w_alpha sup_fiber(|grad^(m+1) V_alpha| + |grad^m (P_alpha - P_alpha(z))|)`
/// with `z = (R/2, 0)` for `x1 >= 0` and `z = (-R/2, 0)` otherwise, so that
/// the pressure drop across the neck is not counted.
pub struct Envelope {
    profile: NeckProfile,
    m: usize,
    parts: Vec<EnvelopePart>,
}

struct EnvelopePart {
    weight: f64,
    velocity: TensorSampler,
    pressure: TensorSampler,
    /// Pressure at the reference points `(-R/2, 0)` and `(R/2, 0)`.
    p_ref: [f64; 2],
}

impl Envelope {
    pub fn new(profile: &NeckProfile, m: usize, levels: usize) -> Result<Self> {
        let hs = BoundaryMode::ALL
            .iter()
            .map(|&mode| CorrectorHierarchy::build(profile, mode, levels))
            .collect::<Result<Vec<_>>>()?;
        Envelope::from_hierarchies(&hs, m)
    }

    /// Uses the full depth of each hierarchy; modes must be distinct.
    pub fn from_hierarchies(hs: &[CorrectorHierarchy], m: usize) -> Result<Self> {
        let profile = hs
            .first()
            .ok_or_else(|| Error::input("envelope needs at least one hierarchy"))?
            .profile()
            .clone();
        let z = 0.5 * profile.r;
        let weights = envelope_weights(profile.eps, profile.symmetric);
        let mut parts = Vec::with_capacity(hs.len());
        for h in hs {
            let weight = weights[h.mode.alpha() as usize - 1];
            if weight == 0.0 {
                continue;
            }
            let v = h.cumulative_v(h.depth());
            let p = h.cumulative_p(h.depth()).as_field();
            let velocity = TensorSampler::new(&[&v.u1, &v.u2], m + 1)?;
            let pressure = TensorSampler::new(&[&p], m)?;
            let p_ref = [pressure.fiber(-z)?.value(0, 0.0), pressure.fiber(z)?.value(0, 0.0)];
            parts.push(EnvelopePart { weight, velocity, pressure, p_ref });
        }
        Ok(Envelope { profile, m, parts })
    }

    pub fn eval(&self, x1: f64) -> Result<f64> {
        let pts = fiber_points(&self.profile, x1, FIBER_POINTS)?;
        let mut total = 0.0;
        let side = usize::from(x1 >= 0.0);
        for part in &self.parts {
            let fv = part.velocity.fiber(x1)?;
            let fp = part.pressure.fiber(x1)?;
            let sup = pts.iter().fold(0.0f64, |acc, &x2| {
                let a = part.velocity.norm_sq(&fv, self.m + 1, x2, &[]).sqrt();
                let b = part.pressure.norm_sq(&fp, self.m, x2, &[part.p_ref[side]]).sqrt();
                acc.max(a + b)
            });
            total += part.weight * sup;
        }
        Ok(total)
    }
}

/// Envelope slope fits for one profile: in `delta` over the window at the
/// smallest `eps`, and in `eps` at `x1 = r sqrt(eps)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFits {
    pub m: usize,
    pub delta_fit: RateFit,
    pub eps_fit: RateFit,
    pub delta_predicted: f64,
    pub eps_predicted: f64,
}

/// Measures envelope slopes for each `m` in `ms`.
///
/// `eps` must hold at least five values spanning two decades.
pub fn envelope_fits(
    profile: &NeckProfile,
    ms: &[usize],
    eps: &[f64],
    settings: &EnvelopeSettings,
) -> Result<Vec<EnvelopeFits>> {
    let eps_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    if !eps_min.is_finite() {
        return Err(Error::input("empty eps sweep"));
    }
    // One set of hierarchies per eps; every m reuses them.
    let per_eps = eps
        .par_iter()
        .map(|&e| -> Result<Vec<f64>> {
            let p = profile.with_eps(e)?;
            let x1 = settings.r * e.sqrt();
            let hs = hierarchies(&p, settings.levels)?;
            ms.iter().map(|&m| Envelope::from_hierarchies(&hs, m)?.eval(x1)).collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let p_min = profile.with_eps(eps_min)?;
    let nodes = settings.window.nodes(&p_min)?;
    let hs = hierarchies(&p_min, settings.levels)?;
    ms.iter()
        .enumerate()
        .map(|(i, &m)| {
            let env = Envelope::from_hierarchies(&hs, m)?;
            let delta_samples = nodes
                .par_iter()
                .flat_map(|&x| [x, -x])
                .map(|x1| Ok((p_min.delta(x1)?, env.eval(x1)?)))
                .collect::<Result<Vec<_>>>()?;
            let eps_samples: Vec<(f64, f64)> = eps.iter().zip(&per_eps).map(|(e, v)| (*e, v[i])).collect();
            Ok(EnvelopeFits {
                m,
                delta_fit: fit_decay_order(&delta_samples)?,
                eps_fit: fit_power_law(&eps_samples, 5, 2.0)?,
                delta_predicted: envelope_delta_exponent(m, profile.symmetric),
                eps_predicted: envelope_eps_exponent(m, profile.symmetric),
            })
        })
        .collect()
}

fn hierarchies(p: &NeckProfile, levels: usize) -> Result<Vec<CorrectorHierarchy>> {
    BoundaryMode::ALL
        .par_iter()
        .map(|&mode| CorrectorHierarchy::build(p, mode, levels))
        .collect()
}

/// Envelope slope rows (two per profile and `m`), in input order.
pub fn theorem_rate_table(
    profiles: &[(String, NeckProfile)],
    ms: &[usize],
    eps: &[f64],
    settings: &EnvelopeSettings,
) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for (id, profile) in profiles {
        let kind = if profile.symmetric { "envelope-symmetric" } else { "envelope-general" };
        let eps_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
        let delta_window = settings.window.label(eps_min);
        let eps_window = format!("x1 = {}sqrt(eps), eps sweep", settings.r);
        let row = |m: usize, window: &str, slope: f64, pred: f64| {
            ReportRow::measured(
                kind,
                "gradient and stress envelope",
                id,
                "1,2,3",
                Some(m),
                None,
                window,
                slope,
                pred,
                ENVELOPE_SLOPE_TOL,
                Comparison::Within,
            )
        };
        match envelope_fits(profile, ms, eps, settings) {
            Ok(fits) => {
                for f in fits {
                    rows.push(row(f.m, &delta_window, f.delta_fit.slope, f.delta_predicted));
                    rows.push(row(f.m, &eps_window, f.eps_fit.slope, f.eps_predicted));
                }
            }
            Err(e) => {
                for &m in ms {
                    let sym = profile.symmetric;
                    rows.push(row(m, &delta_window, f64::NAN, envelope_delta_exponent(m, sym)).failed(&e));
                    rows.push(row(m, &eps_window, f64::NAN, envelope_eps_exponent(m, sym)).failed(&e));
                }
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests;
