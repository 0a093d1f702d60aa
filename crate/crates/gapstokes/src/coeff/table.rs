//! Cumulative piecewise-Chebyshev tables for integral nodes.
//!
//! The integrand is sampled on Chebyshev-Lobatto points per panel, the
//! panel is bisected until the trailing coefficients fall below the
//! requested tolerance, and each accepted panel stores the Chebyshev
//! coefficients of its own antiderivative. Panel integrals are then
//! accumulated outward from the lower limit.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::{Coeff, MIN_TOL};
use crate::error::{Error, Result};

/// Polynomial degree per panel.
const N: usize = 32;
const MAX_DEPTH: u32 = 50;
const MAX_PANELS: usize = 200_000;
const SCAN_POINTS: usize = 4097;
const INITIAL_PIECES: usize = 16;
const MIN_WIDTH: f64 = 1e-9;

fn cos_table() -> &'static Vec<f64> {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    // cos(pi * m / N) for m in 0..2N, indexed modulo 2N.
    TABLE.get_or_init(|| (0..2 * N).map(|m| (PI * m as f64 / N as f64).cos()).collect())
}

#[derive(Debug)]
struct Panel {
    a: f64,
    b: f64,
    /// Integral from the lower limit to `a`.
    offset: f64,
    /// Chebyshev coefficients (in the panel variable) of `x -> int_a^x g`.
    anti: Vec<f64>,
    /// Approximate `int_a^b |g|`.
    mass: f64,
    /// Error bound for values on this panel: `tol` times the absolute
    /// mass between the lower limit and the far end of the panel.
    err: f64,
}

/// Cumulative integral `x -> int_lower^x g` on a closed interval.
#[derive(Debug)]
pub struct CumTable {
    lo: f64,
    hi: f64,
    panels: Vec<Panel>,
}

impl CumTable {
    pub(crate) fn build(integrand: &Coeff, lower: f64, domain: (f64, f64), tol: f64) -> Result<Self> {
        let tol = tol.max(MIN_TOL);
        let inner_tol = (tol / 10.0).max(MIN_TOL);
        let tape = super::Tape::compile(std::slice::from_ref(integrand));
        let bound = tape.bind(inner_tol)?;
        let (mut vals, mut errs) = (Vec::new(), Vec::new());
        // Value and an estimate of its rounding error.
        let mut g = |x: f64| -> Result<(f64, f64)> {
            let (v, e) = bound.eval_first_with_error(x, &mut vals, &mut errs)?;
            if v.is_finite() {
                Ok((v, e))
            } else {
                Err(Error::Quadrature {
                    path: "integrand".into(),
                    detail: format!("non-finite integrand value at x1 = {x}"),
                })
            }
        };

        let (lo, hi) = domain;
        let mut gmax: f64 = 0.0;
        for i in 0..SCAN_POINTS {
            let x = lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64;
            gmax = gmax.max(g(x)?.0.abs());
        }
        let floor = 1e3 * f64::EPSILON * gmax;

        let mut breaks: Vec<f64> = (0..=INITIAL_PIECES)
            .map(|i| lo + (hi - lo) * i as f64 / INITIAL_PIECES as f64)
            .collect();
        breaks.push(lower);
        if lo < 0.0 && 0.0 < hi {
            breaks.push(0.0);
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (hi - lo));
        // Keep the lower limit exact so the accumulation can start there.
        for b in breaks.iter_mut() {
            if (*b - lower).abs() <= 1e-15 * (hi - lo) {
                *b = lower;
            }
        }

        let mut panels: Vec<Panel> = Vec::new();
        let mut samples = vec![0.0; N + 1];
        let mut noise = vec![0.0; N + 1];
        for w in breaks.windows(2) {
            // Depth-first bisection, left to right.
            let mut stack = vec![(w[0], w[1], 0u32)];
            while let Some((a, b, depth)) = stack.pop() {
                let mid = 0.5 * (a + b);
                let hw = 0.5 * (b - a);
                let cos = cos_table();
                for j in 0..=N {
                    (samples[j], noise[j]) = g(mid + hw * cos[j])?;
                }
                // Trailing coefficients cannot drop below the evaluation noise.
                let noise_floor = 8.0 * noise.iter().fold(0.0f64, |m, e| m.max(*e));
                let coef = cheb_coeffs(&samples);
                let scale = coef.iter().fold(0.0f64, |m, c| m.max(c.abs()));
                let tail = coef[N - 2..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
                // Inner tables are only piecewise smooth, so the integrand can
                // carry tiny kinks at their breakpoints; panels narrower than
                // MIN_WIDTH are accepted since their share of the integral is
                // below resolution.
                let accept = tail <= (tol * scale).max(floor).max(noise_floor)
                    || b - a <= MIN_WIDTH * (hi - lo);
                if accept {
                    let mass = (b - a) * samples.iter().map(|v| v.abs()).sum::<f64>() / (N + 1) as f64;
                    let anti = antiderivative(&coef, hw);
                    panels.push(Panel { a, b, offset: 0.0, anti, mass, err: 0.0 });
                    if panels.len() > MAX_PANELS {
                        return Err(Error::Quadrature {
                            path: "table".into(),
                            detail: format!("more than {MAX_PANELS} panels at tolerance {tol:e}"),
                        });
                    }
                } else if depth >= MAX_DEPTH {
                    return Err(Error::Quadrature {
                        path: "table".into(),
                        detail: format!(
                            "panel [{a:e}, {b:e}] unresolved (tail {tail:e}, scale {scale:e}, tol {tol:e})"
                        ),
                    });
                } else {
                    stack.push((mid, b, depth + 1));
                    stack.push((a, mid, depth + 1));
                }
            }
        }

        // Accumulate outward from the lower limit.
        let start = panels
            .iter()
            .position(|p| p.a == lower)
            .unwrap_or(panels.len());
        let (mut acc, mut mass) = (0.0, 0.0);
        for p in panels[start..].iter_mut() {
            p.offset = acc;
            acc += panel_total(&p.anti);
            mass += p.mass;
            p.err = tol * mass;
        }
        let (mut acc, mut mass) = (0.0, 0.0);
        for p in panels[..start].iter_mut().rev() {
            acc -= panel_total(&p.anti);
            p.offset = acc;
            mass += p.mass;
            p.err = tol * mass;
        }
        Ok(CumTable { lo, hi, panels })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.eval_with_error(x).map(|(v, _)| v)
    }

    /// Value at `x` with a bound on its approximation error.
    pub fn eval_with_error(&self, x: f64) -> Result<(f64, f64)> {
        let slack = 1e-12 * (self.hi - self.lo);
        if !(x >= self.lo - slack && x <= self.hi + slack) {
            return Err(Error::domain(format!(
                "x1 = {x} outside integral domain [{}, {}]",
                self.lo, self.hi
            )));
        }
        let x = x.clamp(self.lo, self.hi);
        let i = self.panels.partition_point(|p| p.a <= x).saturating_sub(1);
        let p = &self.panels[i];
        let t = ((2.0 * x - p.a - p.b) / (p.b - p.a)).clamp(-1.0, 1.0);
        Ok((p.offset + clenshaw(&p.anti, t), p.err))
    }
}

/// Chebyshev coefficients of the interpolant through Lobatto samples
/// `f(cos(pi j / N))`.
fn cheb_coeffs(f: &[f64]) -> Vec<f64> {
    let cos = cos_table();
    let mut c = vec![0.0; N + 1];
    for (k, ck) in c.iter_mut().enumerate() {
        let mut s = 0.5 * (f[0] + f[N] * if k % 2 == 0 { 1.0 } else { -1.0 });
        for (j, fj) in f.iter().enumerate().take(N).skip(1) {
            s += fj * cos[(j * k) % (2 * N)];
        }
        *ck = 2.0 * s / N as f64;
    }
    c[0] *= 0.5;
    c[N] *= 0.5;
    c
}

/// Coefficients of `x -> int_a^x f` for `f = sum c_k T_k(t)` with
/// `x = mid + hw t`; the result vanishes at `t = -1`.
fn antiderivative(c: &[f64], hw: f64) -> Vec<f64> {
    let n = c.len() - 1;
    let at = |k: usize| if k <= n { c[k] } else { 0.0 };
    let mut a = vec![0.0; n + 2];
    for (k, ak) in a.iter_mut().enumerate().skip(1) {
        let cm = if k == 1 { 2.0 * at(0) } else { at(k - 1) };
        *ak = hw * (cm - at(k + 1)) / (2.0 * k as f64);
    }
    let mut at_minus_one = 0.0;
    for (k, ak) in a.iter().enumerate().skip(1) {
        at_minus_one += if k % 2 == 0 { *ak } else { -*ak };
    }
    a[0] = -at_minus_one;
    a
}

fn panel_total(anti: &[f64]) -> f64 {
    anti.iter().sum()
}

fn clenshaw(c: &[f64], t: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + c[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chebyshev_roundtrip_of_cubic() {
        let f: Vec<f64> = (0..=N)
            .map(|j| {
                let t = cos_table()[j];
                1.0 + 2.0 * t - t * t * t
            })
            .collect();
        let c = cheb_coeffs(&f);
        for t in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert!((clenshaw(&c, t) - (1.0 + 2.0 * t - t * t * t)).abs() < 1e-14);
        }
        let a = antiderivative(&c, 1.0);
        // int_{-1}^{1} (1 + 2t - t^3) dt = 2
        assert!((panel_total(&a) - 2.0).abs() < 1e-14);
        assert!(clenshaw(&a, -1.0).abs() < 1e-15);
    }

    #[test]
    fn table_of_exponential_like_integrand() {
        let x = Coeff::x1();
        let den = Coeff::constant(1e-3) + &x * &x;
        let g = den.recip().unwrap();
        let table = CumTable::build(&g, 0.0, (-1.0, 1.0), 1e-12).unwrap();
        let exact = |x: f64| (x / 1e-3f64.sqrt()).atan() / 1e-3f64.sqrt();
        for x in [-1.0, -0.5, -0.01, 0.0, 0.003, 0.2, 1.0] {
            let v = table.eval(x).unwrap();
            assert!((v - exact(x)).abs() <= 1e-10 * exact(1.0), "x={x}: {v} vs {}", exact(x));
        }
        assert!(table.eval(1.5).is_err());
    }
}
