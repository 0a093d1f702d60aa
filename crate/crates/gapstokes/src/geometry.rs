//! Neck geometry between the two inclusions.
//!
//! In the neck chart the upper inclusion boundary is the graph
//! `x2 = eps/2 + h1(x1)` and the lower one is `x2 = -eps/2 - h2(x1)`, for
//! `|x1| <= 2R`. Everything downstream is phrased in terms of the gap width
//! `delta(x1) = eps + h1 + h2` and the normalized vertical coordinate
//! `k = (x2 - (h1 - h2)/2) / delta`, which runs from -1/2 on the bottom wall to
//! +1/2 on the top wall.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default chart half-width.
pub const DEFAULT_R: f64 = 0.5;
/// Default cap on wall-profile derivative orders.
pub const DEFAULT_DERIV_CAP: u32 = 6;

/// A wall profile `h(x1)`, stored as polynomial coefficients in increasing
/// powers of `x1`. Derivatives of every order are exact; orders above the
/// degree are identically zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfileFn")]
pub struct ProfileFn {
    poly: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfileFn {
    poly: Vec<f64>,
}

impl TryFrom<RawProfileFn> for ProfileFn {
    type Error = Error;

    fn try_from(raw: RawProfileFn) -> Result<Self> {
        ProfileFn::poly(raw.poly)
    }
}

impl ProfileFn {
    /// Builds a profile from coefficients `[c0, c1, ...]`. Trailing zeros are
    /// dropped so that `degree` is exact.
    pub fn poly(coeffs: impl Into<Vec<f64>>) -> Result<Self> {
        let mut poly: Vec<f64> = coeffs.into();
        if poly.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("profile coefficients must be finite"));
        }
        while poly.last() == Some(&0.0) {
            poly.pop();
        }
        Ok(ProfileFn { poly })
    }

    /// The shortcut profile `x1^2 / 2`.
    pub fn half_square() -> Self {
        ProfileFn { poly: vec![0.0, 0.0, 0.5] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.poly
    }

    /// Polynomial degree; the zero polynomial reports 0.
    pub fn degree(&self) -> u32 {
        self.poly.len().saturating_sub(1) as u32
    }

    /// Value of the `k`-th derivative at `x`.
    pub fn deriv(&self, k: u32, x: f64) -> f64 {
        let k = k as usize;
        if k >= self.poly.len() {
            return 0.0;
        }
        let mut acc = 0.0;
        for j in (k..self.poly.len()).rev() {
            acc = acc * x + self.poly[j] * falling(j, k);
        }
        acc
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.deriv(0, x)
    }

    /// True when every power present is even.
    pub fn is_even(&self) -> bool {
        self.poly.iter().enumerate().all(|(j, c)| j % 2 == 0 || *c == 0.0)
    }
}

/// `j (j-1) ... (j-k+1)` as a float.
fn falling(j: usize, k: usize) -> f64 {
    ((j - k + 1)..=j).fold(1.0, |acc, t| acc * t as f64)
}

/// Which inclusion wall.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Top,
    Bottom,
}

/// The neck between the two inclusions together with the physical constants.
///
/// Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct NeckProfile {
    pub eps: f64,
    pub r: f64,
    pub kappa: f64,
    pub mu: f64,
    pub h1: Arc<ProfileFn>,
    pub h2: Arc<ProfileFn>,
    /// Largest wall-profile derivative order that may be evaluated.
    pub deriv_cap: u32,
    pub symmetric: bool,
}

impl NeckProfile {
    /// Builds a profile with the default chart (`R = 1/2`, `mu = 1`,
    /// derivative cap 6) and a convexity constant measured from the walls.
    pub fn new(eps: f64, h1: ProfileFn, h2: ProfileFn) -> Result<Self> {
        NeckBuilder::new(eps, h1, h2).build()
    }

    pub fn builder(eps: f64, h1: ProfileFn, h2: ProfileFn) -> NeckBuilder {
        NeckBuilder::new(eps, h1, h2)
    }

    /// Returns a copy with a different inclusion distance.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        NeckBuilder {
            eps,
            r: self.r,
            mu: self.mu,
            kappa: Some(self.kappa),
            deriv_cap: self.deriv_cap,
            h1: (*self.h1).clone(),
            h2: (*self.h2).clone(),
        }
        .build()
    }

    fn check_x1(&self, x1: f64) -> Result<()> {
        if !x1.is_finite() || x1.abs() > 2.0 * self.r * (1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "x1 = {x1} outside the neck chart |x1| <= {}",
                2.0 * self.r
            )));
        }
        Ok(())
    }

    /// Gap width `eps + h1(x1) + h2(x1)`.
    pub fn delta(&self, x1: f64) -> Result<f64> {
        self.check_x1(x1)?;
        Ok(self.delta_unchecked(x1))
    }

    pub(crate) fn delta_unchecked(&self, x1: f64) -> f64 {
        self.eps + self.h1.eval(x1) + self.h2.eval(x1)
    }

    /// Height of the wall on the given side: `eps/2 + h1` on top,
    /// `-eps/2 - h2` on the bottom.
    pub fn wall(&self, side: Side, x1: f64) -> f64 {
        match side {
            Side::Top => 0.5 * self.eps + self.h1.eval(x1),
            Side::Bottom => -0.5 * self.eps - self.h2.eval(x1),
        }
    }

    fn check_point(&self, x1: f64, x2: f64) -> Result<f64> {
        self.check_x1(x1)?;
        let d = self.delta_unchecked(x1);
        let slack = 1e-9 * d;
        if !x2.is_finite()
            || x2 > self.wall(Side::Top, x1) + slack
            || x2 < self.wall(Side::Bottom, x1) - slack
        {
            return Err(Error::domain(format!("({x1}, {x2}) is not inside the gap")));
        }
        Ok(d)
    }

    /// The normalized vertical coordinate `k(x)`.
    pub fn keller(&self, x1: f64, x2: f64) -> Result<f64> {
        let d = self.check_point(x1, x2)?;
        Ok(self.keller_unchecked(x1, x2, d))
    }

    pub(crate) fn keller_unchecked(&self, x1: f64, x2: f64, d: f64) -> f64 {
        (x2 - 0.5 * (self.h1.eval(x1) - self.h2.eval(x1))) / d
    }

    /// `(d k / d x1, d k / d x2)` from the closed formulas.
    pub fn keller_grad(&self, x1: f64, x2: f64) -> Result<(f64, f64)> {
        let d = self.check_point(x1, x2)?;
        let k = self.keller_unchecked(x1, x2, d);
        let (p1, p2) = (self.h1.deriv(1, x1), self.h2.deriv(1, x1));
        Ok((-(p1 - p2) / (2.0 * d) - (p1 + p2) * k / d, 1.0 / d))
    }

    /// Smallest `h1 + h2 >= kappa x1^2` constant over a sample of the chart,
    /// including the limit at the origin.
    fn measured_kappa(h1: &ProfileFn, h2: &ProfileFn, r: f64) -> f64 {
        let n = 2000;
        (1..=n)
            .flat_map(|i| {
                let x = 2.0 * r * i as f64 / n as f64;
                [x, -x]
            })
            .map(|x| (h1.eval(x) + h2.eval(x)) / (x * x))
            .fold(0.5 * (h1.deriv(2, 0.0) + h2.deriv(2, 0.0)), f64::min)
    }
}

/// Builder for [`NeckProfile`] with validation at `build`.
#[derive(Clone, Debug)]
pub struct NeckBuilder {
    eps: f64,
    r: f64,
    mu: f64,
    kappa: Option<f64>,
    deriv_cap: u32,
    h1: ProfileFn,
    h2: ProfileFn,
}

impl NeckBuilder {
    pub fn new(eps: f64, h1: ProfileFn, h2: ProfileFn) -> Self {
        NeckBuilder {
            eps,
            r: DEFAULT_R,
            mu: 1.0,
            kappa: None,
            deriv_cap: DEFAULT_DERIV_CAP,
            h1,
            h2,
        }
    }

    pub fn r(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    pub fn mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    /// Declares a convexity constant; `build` checks it against the walls.
    pub fn kappa(mut self, kappa: f64) -> Self {
        self.kappa = Some(kappa);
        self
    }

    pub fn deriv_cap(mut self, cap: u32) -> Self {
        self.deriv_cap = cap;
        self
    }

    pub fn build(self) -> Result<NeckProfile> {
        let NeckBuilder { eps, r, mu, kappa, deriv_cap, h1, h2 } = self;
        for (name, v) in [("eps", eps), ("R", r), ("mu", mu)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        if deriv_cap < 1 {
            return Err(Error::input("derivative cap must be at least 1"));
        }
        for (name, h) in [("h1", &h1), ("h2", &h2)] {
            if h.eval(0.0).abs() > 1e-12 || h.deriv(1, 0.0).abs() > 1e-12 {
                return Err(Error::input(format!(
                    "{name} must vanish to first order at the origin"
                )));
            }
        }
        let measured = NeckProfile::measured_kappa(&h1, &h2, r);
        let kappa = match kappa {
            Some(k) if !(k > 0.0) => {
                return Err(Error::input(format!("kappa must be positive, got {k}")))
            }
            Some(k) if k > measured * (1.0 + 1e-12) => {
                return Err(Error::input(format!(
                    "h1 + h2 >= {k} x1^2 fails; the walls only support kappa = {measured}"
                )))
            }
            Some(k) => k,
            None => measured,
        };
        if !(kappa > 0.0) {
            return Err(Error::input("h1 + h2 is not bounded below by a positive multiple of x1^2"));
        }
        let n = 4000;
        for i in 0..=n {
            let x = -2.0 * r + 4.0 * r * i as f64 / n as f64;
            let d = eps + h1.eval(x) + h2.eval(x);
            if !(d > 0.0) {
                return Err(Error::input(format!("gap width is not positive at x1 = {x}")));
            }
        }
        let symmetric = h1 == h2;
        Ok(NeckProfile {
            eps,
            r,
            kappa,
            mu,
            h1: Arc::new(h1),
            h2: Arc::new(h2),
            deriv_cap,
            symmetric,
        })
    }
}

/// The three built-in test geometries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NamedProfile {
    /// `h1 = h2 = x1^2 / 2`.
    SymQuadratic,
    /// `h1 = x1^2`, `h2 = x1^2 / 2`.
    AsymQuadratic,
    /// `h1 = x1^2 / 2 + x1^4`, `h2 = x1^2 / 2`.
    SymQuartic,
}

impl NamedProfile {
    pub const ALL: [NamedProfile; 3] =
        [NamedProfile::SymQuadratic, NamedProfile::AsymQuadratic, NamedProfile::SymQuartic];

    pub fn id(self) -> &'static str {
        match self {
            NamedProfile::SymQuadratic => "sym-quadratic",
            NamedProfile::AsymQuadratic => "asym-quadratic",
            NamedProfile::SymQuartic => "sym-quartic",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        NamedProfile::ALL.into_iter().find(|p| p.id() == id)
    }

    pub fn walls(self) -> (ProfileFn, ProfileFn) {
        match self {
            NamedProfile::SymQuadratic => (ProfileFn::half_square(), ProfileFn::half_square()),
            NamedProfile::AsymQuadratic => {
                (ProfileFn { poly: vec![0.0, 0.0, 1.0] }, ProfileFn::half_square())
            }
            NamedProfile::SymQuartic => (
                ProfileFn { poly: vec![0.0, 0.0, 0.5, 0.0, 1.0] },
                ProfileFn::half_square(),
            ),
        }
    }

    pub fn profile(self, eps: f64) -> Result<NeckProfile> {
        let (h1, h2) = self.walls();
        NeckProfile::new(eps, h1, h2)
    }
}

impl fmt::Display for NamedProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// JSON form of a profile:
/// `{"eps": .., "R": .., "mu": .., "h1": {"poly": [..]}, "h2": {"poly": [..]}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDoc {
    pub eps: f64,
    #[serde(rename = "R", default = "default_r")]
    pub r: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(rename = "M", default = "default_cap")]
    pub deriv_cap: u32,
    pub h1: ProfileFn,
    pub h2: ProfileFn,
}

fn default_r() -> f64 {
    DEFAULT_R
}
fn default_mu() -> f64 {
    1.0
}
fn default_cap() -> u32 {
    DEFAULT_DERIV_CAP
}

impl ProfileDoc {
    pub fn from_profile(p: &NeckProfile) -> Self {
        ProfileDoc {
            eps: p.eps,
            r: p.r,
            mu: p.mu,
            kappa: Some(p.kappa),
            deriv_cap: p.deriv_cap,
            h1: (*p.h1).clone(),
            h2: (*p.h2).clone(),
        }
    }

    pub fn into_profile(self) -> Result<NeckProfile> {
        let mut b = NeckBuilder::new(self.eps, self.h1, self.h2)
            .r(self.r)
            .mu(self.mu)
            .deriv_cap(self.deriv_cap);
        if let Some(k) = self.kappa {
            b = b.kappa(k);
        }
        b.build()
    }
}

/// Parses a profile document; errors carry the line and column of the fault.
pub fn parse_profile_json(text: &str) -> Result<NeckProfile> {
    let doc: ProfileDoc = serde_json::from_str(text).map_err(|e| {
        Error::input(format!("profile JSON line {} column {}: {e}", e.line(), e.column()))
    })?;
    doc.into_profile()
}
