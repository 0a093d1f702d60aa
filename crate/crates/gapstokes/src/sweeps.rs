//! Batch runs: a [`RunConfig`] names a profile, modes, an `eps` sweep and a
//! set of checks; [`run`] evaluates every check and collects the rows of a
//! [`RateReport`].
//!
//! Work is split into independent cells (one check for one mode, or one
//! `eps`), which run on a worker pool capped by the `NECK_THREADS`
//! environment variable. A cell that fails or panics turns into failed rows;
//! it never aborts the run. Rows are assembled in cell order, so the report
//! does not depend on scheduling.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correctors::{BoundaryMode, CorrectorHierarchy};
use crate::error::{Error, Result};
use crate::fd::{self, DEFAULT_N1, DEFAULT_N2, MIN_N2};
use crate::geometry::{parse_profile_json, NamedProfile, NeckProfile, ProfileDoc};
use crate::report::{Comparison, Fingerprint, RateReport, ReportFormat, ReportRow};
use crate::verifier::{
    blowup_prediction, corrector_blowup_order, cross_construction, envelope_fits, residual_orders,
    structure_checks, EnvelopeSettings, Window, BLOWUP_SLOPE_TOL, CROSS_RATIO, DEFAULT_EPS_SWEEP,
    DIVERGENCE_TOL, ENVELOPE_SLOPE_TOL, EVAL_TOL, RESIDUAL_SLOPE_TOL, TRACE_TOL,
};

/// Largest accepted `m_max`.
pub const MAX_M: usize = 5;
/// Minimum number of `eps` values and decades they must span.
pub const MIN_EPS_COUNT: usize = 5;
pub const MIN_EPS_DECADES: f64 = 2.0;
/// Environment variable capping the worker pool.
pub const THREADS_VAR: &str = "NECK_THREADS";

/// Levels compared between the general and kernel constructions.
const CROSS_LEVELS: usize = 3;
/// Grids of the closed-form convergence check.
const CONVERGENCE_GRIDS: [usize; 4] = [32, 64, 128, 256];

/// Where the walls come from: a built-in name, a path to a profile JSON
/// file, or an inline profile document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    NameOrPath(String),
    Inline(ProfileDoc),
}

impl ProfileSpec {
    /// Resolves to `(id, profile)`. Relative paths are taken from `base`.
    pub fn resolve(&self, base: Option<&Path>) -> Result<(String, NeckProfile)> {
        match self {
            ProfileSpec::NameOrPath(s) => {
                if let Some(named) = NamedProfile::from_id(s) {
                    return Ok((s.clone(), named.profile(DEFAULT_EPS_SWEEP[0])?));
                }
                let path = match base {
                    Some(b) if Path::new(s).is_relative() => b.join(s),
                    _ => PathBuf::from(s),
                };
                let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
                    path: path.display().to_string(),
                    detail: format!("not a built-in profile name and not readable: {e}"),
                })?;
                let profile = parse_profile_json(&text)
                    .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
                let id = path.file_stem().map_or_else(|| s.clone(), |f| f.to_string_lossy().into_owned());
                Ok((id, profile))
            }
            ProfileSpec::Inline(doc) => Ok(("inline".into(), doc.clone().into_profile()?)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n1: usize,
    pub n2: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n1: DEFAULT_N1, n2: DEFAULT_N2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Evaluation tolerance of integral nodes in forcing samples.
    pub quadrature: f64,
    pub residual_slope: f64,
    pub blowup_slope: f64,
    pub envelope_slope: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            quadrature: EVAL_TOL,
            residual_slope: RESIDUAL_SLOPE_TOL,
            blowup_slope: BLOWUP_SLOPE_TOL,
            envelope_slope: ENVELOPE_SLOPE_TOL,
        }
    }
}

/// The checks a run can perform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// Divergence, wall traces and residual degrees of every level.
    Structure,
    /// Decay of the residual derivatives in `delta`.
    Residual,
    /// Growth of the level-1 first-mode derivatives in `eps`.
    Blowup,
    /// General against kernel construction on identical walls.
    Cross,
    /// Finite-difference response to the first-mode residual.
    Stokes,
    /// Gradient and stress envelope slopes.
    Envelope,
    /// Finite-difference grid convergence on a closed-form solution.
    Manufactured,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::Structure,
        CheckKind::Residual,
        CheckKind::Blowup,
        CheckKind::Cross,
        CheckKind::Stokes,
        CheckKind::Envelope,
        CheckKind::Manufactured,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        CheckKind::ALL
            .into_iter()
            .find(|c| c.id() == s.trim())
            .ok_or_else(|| Error::input(format!("unknown check '{s}'")))
    }

    pub fn id(self) -> &'static str {
        match self {
            CheckKind::Structure => "structure",
            CheckKind::Residual => "residual",
            CheckKind::Blowup => "blowup",
            CheckKind::Cross => "cross",
            CheckKind::Stokes => "stokes",
            CheckKind::Envelope => "envelope",
            CheckKind::Manufactured => "manufactured",
        }
    }
}

fn default_profile() -> ProfileSpec {
    ProfileSpec::NameOrPath(NamedProfile::SymQuadratic.id().into())
}
fn default_modes() -> Vec<u8> {
    vec![1, 2, 3]
}
fn default_m_max() -> usize {
    3
}
fn default_eps() -> Vec<f64> {
    DEFAULT_EPS_SWEEP.to_vec()
}
fn default_checks() -> Vec<CheckKind> {
    vec![CheckKind::Structure, CheckKind::Residual, CheckKind::Blowup, CheckKind::Cross, CheckKind::Stokes]
}
fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Csv, ReportFormat::Json]
}

/// Configuration of one batch run. Every field has a default, so `{}` is a
/// valid config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_profile")]
    pub profile: ProfileSpec,
    /// Boundary modes, as `alpha` in `{1, 2, 3}`.
    #[serde(default = "default_modes")]
    pub modes: Vec<u8>,
    /// Highest residual order checked.
    #[serde(default = "default_m_max")]
    pub m_max: usize,
    /// Inclusion distances, strictly decreasing.
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_checks")]
    pub checks: Vec<CheckKind>,
    /// Report directory; `None` leaves writing to the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

impl RunConfig {
    /// Parses a config document; errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::input(format!("config JSON line {} column {}: {e}", e.line(), e.column())))
    }

    /// Reads and parses a config file. A relative profile path is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), detail: e.to_string() })?;
        let mut config =
            RunConfig::from_json(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        if let (ProfileSpec::NameOrPath(s), Some(dir)) = (&config.profile, path.parent()) {
            if NamedProfile::from_id(s).is_none() && Path::new(s).is_relative() {
                config.profile = ProfileSpec::NameOrPath(dir.join(s).display().to_string());
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form, leaving out where reports are
    /// written.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { output_dir: None, ..self.clone() };
        Sha256::digest(canonical.to_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks the config against the profile it names.
    pub fn validate(&self, profile: &NeckProfile) -> Result<()> {
        if self.m_max == 0 {
            return Err(Error::input("m_max must be at least 1"));
        }
        if self.m_max + 1 > profile.deriv_cap as usize {
            return Err(Error::input(format!(
                "m_max = {} exceeds derivative cap: the profile allows m_max <= {}",
                self.m_max,
                profile.deriv_cap.saturating_sub(1)
            )));
        }
        if self.m_max > MAX_M {
            return Err(Error::input(format!("m_max = {} exceeds the limit {MAX_M}", self.m_max)));
        }
        if self.modes.is_empty() {
            return Err(Error::input("no boundary modes selected"));
        }
        for (i, &a) in self.modes.iter().enumerate() {
            BoundaryMode::from_alpha(a)?;
            if self.modes[..i].contains(&a) {
                return Err(Error::input(format!("mode {a} listed twice")));
            }
        }
        if let Some(e) = self.eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::input(format!("eps values must be positive and finite, got {e}")));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::input("eps values must be strictly decreasing"));
        }
        let decades = match (self.eps.first(), self.eps.last()) {
            (Some(a), Some(b)) => (a / b).log10(),
            _ => 0.0,
        };
        if self.eps.len() < MIN_EPS_COUNT || decades < MIN_EPS_DECADES - 1e-9 {
            return Err(Error::input(format!(
                "insufficient eps span: need at least {MIN_EPS_COUNT} values over {MIN_EPS_DECADES} decades, got {} over {decades:.2}",
                self.eps.len()
            )));
        }
        if self.grid.n2 < MIN_N2 || self.grid.n1 < 8 {
            return Err(Error::input(format!(
                "grid {}x{} is too coarse (need n1 >= 8, n2 >= {MIN_N2})",
                self.grid.n1, self.grid.n2
            )));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("quadrature", t.quadrature),
            ("residual_slope", t.residual_slope),
            ("blowup_slope", t.blowup_slope),
            ("envelope_slope", t.envelope_slope),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("tolerance {name} must be positive, got {v}")));
            }
        }
        if self.checks.is_empty() {
            return Err(Error::input("no checks selected"));
        }
        if self.formats.is_empty() {
            return Err(Error::input("no report formats selected"));
        }
        Ok(())
    }

    /// Resolves the profile and validates the config against it.
    pub fn prepare(&self) -> Result<(String, NeckProfile)> {
        let (id, profile) = self.profile.resolve(None)?;
        self.validate(&profile)?;
        Ok((id, profile))
    }
}

/// Worker count from `NECK_THREADS`; `None` means all cores.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::input(format!("{THREADS_VAR} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

/// One independent unit of work.
#[derive(Clone, Copy, Debug)]
enum Cell {
    Structure { alpha: u8, eps: f64 },
    Residual { alpha: u8 },
    Blowup,
    Cross,
    Stokes,
    Envelope,
    Manufactured,
}

struct Ctx<'a> {
    config: &'a RunConfig,
    id: &'a str,
    profile: &'a NeckProfile,
}

impl Ctx<'_> {
    fn eps_min(&self) -> f64 {
        *self.config.eps.last().expect("validated eps list")
    }

    fn at(&self, eps: f64) -> Result<NeckProfile> {
        self.profile.with_eps(eps)
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &self,
        check: &str,
        anchor: &str,
        alpha: &str,
        m: Option<usize>,
        s: Option<usize>,
        window: &str,
        value: f64,
        predicted: f64,
        tolerance: f64,
        comparison: Comparison,
    ) -> ReportRow {
        ReportRow::measured(check, anchor, self.id, alpha, m, s, window, value, predicted, tolerance, comparison)
    }
}

fn cells(config: &RunConfig, profile: &NeckProfile) -> Vec<Cell> {
    let mut out = Vec::new();
    let first_mode = config.modes.contains(&1);
    for check in CheckKind::ALL.into_iter().filter(|c| config.checks.contains(c)) {
        match check {
            CheckKind::Structure => {
                for &alpha in &config.modes {
                    for &eps in &config.eps {
                        out.push(Cell::Structure { alpha, eps });
                    }
                }
            }
            CheckKind::Residual => out.extend(config.modes.iter().map(|&alpha| Cell::Residual { alpha })),
            CheckKind::Blowup if first_mode && profile.symmetric => out.push(Cell::Blowup),
            CheckKind::Cross if first_mode && profile.symmetric => out.push(Cell::Cross),
            CheckKind::Stokes if first_mode => out.push(Cell::Stokes),
            CheckKind::Envelope => out.push(Cell::Envelope),
            CheckKind::Manufactured => out.push(Cell::Manufactured),
            _ => {}
        }
    }
    out
}

fn structure_rows(ctx: &Ctx, alpha: u8, eps: f64) -> Vec<ReportRow> {
    let levels = ctx.config.m_max + 1;
    let a = alpha.to_string();
    let template = |l: usize| {
        let w = format!("eps={eps:e}, level {l}");
        [
            ctx.row("divergence", "structural exactness", &a, None, None, &w, f64::NAN, DIVERGENCE_TOL, 0.0, Comparison::AtMost),
            ctx.row("wall-trace", "structural exactness", &a, None, None, &w, f64::NAN, TRACE_TOL, 0.0, Comparison::AtMost),
            ctx.row("residual-degrees", "structural exactness", &a, None, None, &w, f64::NAN, 0.0, 0.0, Comparison::AtMost),
        ]
    };
    let measured = (|| {
        let p = ctx.at(eps)?;
        let h = CorrectorHierarchy::build(&p, BoundaryMode::from_alpha(alpha)?, levels)?;
        structure_checks(&h)
    })();
    match measured {
        Ok(checks) => checks
            .iter()
            .flat_map(|c| {
                let [mut div, mut trace, mut deg] = template(c.level);
                let mismatch = match c.degrees {
                    (Some(d1), Some(d2)) => (d1.abs_diff(c.expected_degrees.0) + d2.abs_diff(c.expected_degrees.1)) as f64,
                    _ => f64::INFINITY,
                };
                for (row, v) in [(&mut div, c.divergence), (&mut trace, c.trace), (&mut deg, mismatch)] {
                    row.slope = Some(v);
                    // Structural bounds are strict.
                    row.pass = v.is_finite() && (v < row.predicted || (row.predicted == 0.0 && v == 0.0));
                }
                deg.note = format!(
                    "degrees {:?}, expected {:?}",
                    (c.degrees.0, c.degrees.1),
                    c.expected_degrees
                );
                [div, trace, deg]
            })
            .collect(),
        Err(e) => (1..=levels).flat_map(|l| template(l).map(|r| r.failed(&e))).collect(),
    }
}

fn residual_rows(ctx: &Ctx, alpha: u8) -> Vec<ReportRow> {
    let tol = ctx.config.tolerances.residual_slope;
    let eps = ctx.eps_min();
    let a = alpha.to_string();
    let window = Window::standard(ctx.profile);
    let label = window.label(eps);
    let mut rows = Vec::new();
    let h = ctx
        .at(eps)
        .and_then(|p| CorrectorHierarchy::build(&p, BoundaryMode::from_alpha(alpha)?, ctx.config.m_max + 1));
    for m in 1..=ctx.config.m_max {
        let template = |s: usize, slope: f64| {
            let pred = m as f64 - s as f64 - 1.0;
            ctx.row("residual-decay", "residual decay", &a, Some(m), Some(s), &label, slope, pred, tol, Comparison::AtLeast)
        };
        match h.as_ref().map_err(Clone::clone).and_then(|h| residual_orders(h, m, &window)) {
            Ok(checks) => rows.extend(checks.iter().map(|c| template(c.s, c.fit.slope))),
            Err(e) => rows.extend((0..=m).map(|s| template(s, f64::NAN).failed(&e))),
        }
    }
    rows
}

fn blowup_rows(ctx: &Ctx) -> Vec<ReportRow> {
    let tol = ctx.config.tolerances.blowup_slope;
    let r = 0.5;
    let window = format!("(x1, x2) = ({r}sqrt(eps), 0), eps sweep");
    (0..=ctx.config.m_max.min(3) as u32)
        .into_par_iter()
        .map(|m| {
            let pred = blowup_prediction(m);
            let row = |v: f64| {
                ctx.row("corrector-blowup", "corrector blow-up rate", "1", Some(m as usize), None, &window, v, pred, tol, Comparison::Within)
            };
            match corrector_blowup_order(ctx.profile, &ctx.config.eps, (m, 1), 0, r) {
                Ok(fit) => row(fit.slope),
                Err(e) => row(f64::NAN).failed(&e),
            }
        })
        .collect()
}

fn cross_rows(ctx: &Ctx) -> Vec<ReportRow> {
    let eps = ctx.eps_min();
    let window = format!("eps={eps:e}");
    let anchor = "construction consistency";
    let first = |v: f64| ctx.row("cross-level1-gap", anchor, "1", Some(1), None, &window, v, 1e-12, 0.0, Comparison::AtMost);
    // A ratio within [1/10, 10] is a log10 within 1 of zero.
    let ratio = |l: usize, v: f64| {
        ctx.row("cross-residual-log-ratio", anchor, "1", Some(l), None, &window, v, 0.0, CROSS_RATIO.log10(), Comparison::Within)
    };
    match ctx.at(eps).and_then(|p| cross_construction(&p, CROSS_LEVELS)) {
        Ok(c) => std::iter::once(first(c.level1_gap))
            .chain(c.residual_ratios.iter().map(|&(l, r)| ratio(l, r.log10())))
            .collect(),
        Err(e) => std::iter::once(first(f64::NAN))
            .chain((2..=CROSS_LEVELS).map(|l| ratio(l, f64::NAN)))
            .map(|r| r.failed(&e))
            .collect(),
    }
}

fn stokes_rows(ctx: &Ctx) -> Vec<ReportRow> {
    let c = ctx.config;
    let sweep = format!("eps {:e}..{:e}", c.eps[0], ctx.eps_min());
    let local = format!("windows |x1 - z1| < delta(z1), eps={:e}", ctx.eps_min());
    let m = Some(1);
    let rows = [
        ctx.row("stokes-sup-grad-spread", "interior gradient bound", "1", m, None, &sweep, f64::NAN, 3.0, 0.0, Comparison::AtMost),
        ctx.row("stokes-energy-spread", "global energy bound", "1", m, None, &sweep, f64::NAN, 2.0, 0.0, Comparison::AtMost),
        ctx.row("stokes-corrector-growth", "corrector captures the singularity", "1", m, None, "x1 = 0, eps sweep", f64::NAN, -1.0, 0.1, Comparison::Within),
        ctx.row("stokes-local-energy", "local energy decay", "1", m, None, &local, f64::NAN, 4.0, 0.5, Comparison::AtLeast),
        ctx.row("stokes-high-derivative", "interior derivative bound", "1", m, None, &local, f64::NAN, 0.0, 0.5, Comparison::AtLeast),
        ctx.row("stokes-divergence", "plumbing", "1", m, None, &sweep, f64::NAN, 1e-10, 0.0, Comparison::AtMost),
        ctx.row("stokes-energy-identity", "plumbing", "1", m, None, &sweep, f64::NAN, 1e-2, 0.0, Comparison::AtMost),
    ];
    match fd::residual_response(ctx.profile, &c.eps, (c.grid.n1, c.grid.n2), c.tolerances.quadrature) {
        Ok(r) => {
            let worst = |f: fn(&fd::ResponseSample) -> f64| r.samples.iter().map(f).fold(0.0, f64::max);
            let values = [
                r.sup_grad_spread(),
                r.energy_spread(),
                r.corrector_fit.slope,
                r.local_fit.slope,
                r.high_deriv_fit.slope,
                worst(|s| s.max_divergence),
                worst(|s| s.identity_gap),
            ];
            rows.into_iter()
                .zip(values)
                .map(|(row, v)| remeasure(row, v))
                .collect()
        }
        Err(e) => rows.into_iter().map(|r| r.failed(&e)).collect(),
    }
}

fn manufactured_rows(ctx: &Ctx) -> Vec<ReportRow> {
    let eps = ctx.config.eps[0];
    let window = format!("grids {CONVERGENCE_GRIDS:?}, eps={eps:e}");
    let mut rows: Vec<ReportRow> = (1..CONVERGENCE_GRIDS.len())
        .map(|k| {
            let w = format!("n {} -> {}, eps={eps:e}", CONVERGENCE_GRIDS[k - 1], CONVERGENCE_GRIDS[k]);
            ctx.row("fd-convergence-order", "plumbing", "", None, None, &w, f64::NAN, 2.0, 0.2, Comparison::Within)
        })
        .collect();
    rows.push(ctx.row("fd-zero-forcing", "plumbing", "", None, None, &window, f64::NAN, 1e-10, 0.0, Comparison::AtMost));
    rows.push(ctx.row("fd-energy-identity", "plumbing", "", None, None, &window, f64::NAN, 1e-2, 0.0, Comparison::AtMost));
    rows.push(ctx.row("fd-divergence", "plumbing", "", None, None, &window, f64::NAN, 1e-10, 0.0, Comparison::AtMost));
    match ctx.at(eps).and_then(|p| fd::manufactured_convergence(&p, &CONVERGENCE_GRIDS)) {
        Ok(s) => {
            let values = s.orders.iter().copied().chain([s.zero_solution, s.identity_gap, s.max_divergence]);
            rows.into_iter().zip(values).map(|(r, v)| remeasure(r, v)).collect()
        }
        Err(e) => rows.into_iter().map(|r| r.failed(&e)).collect(),
    }
}

fn envelope_rows(ctx: &Ctx) -> Vec<ReportRow> {
    let tol = ctx.config.tolerances.envelope_slope;
    let settings = EnvelopeSettings::standard();
    let ms: Vec<usize> = (0..=ctx.config.m_max.min(2)).collect();
    let kind = if ctx.profile.symmetric { "envelope-symmetric" } else { "envelope-general" };
    let delta_window = settings.window.label(ctx.eps_min());
    let eps_window = format!("x1 = {}sqrt(eps), eps sweep", settings.r);
    let row = |m: usize, w: &str, v: f64, pred: f64| {
        ctx.row(kind, "gradient and stress envelope", "1,2,3", Some(m), None, w, v, pred, tol, Comparison::Within)
    };
    match envelope_fits(ctx.profile, &ms, &ctx.config.eps, &settings) {
        Ok(fits) => fits
            .iter()
            .flat_map(|f| {
                [
                    row(f.m, &delta_window, f.delta_fit.slope, f.delta_predicted),
                    row(f.m, &eps_window, f.eps_fit.slope, f.eps_predicted),
                ]
            })
            .collect(),
        Err(e) => {
            let sym = ctx.profile.symmetric;
            ms.iter()
                .flat_map(|&m| {
                    [
                        row(m, &delta_window, f64::NAN, crate::verifier::envelope_delta_exponent(m, sym)),
                        row(m, &eps_window, f64::NAN, crate::verifier::envelope_eps_exponent(m, sym)),
                    ]
                })
                .map(|r| r.failed(&e))
                .collect()
        }
    }
}

/// Sets the measured value of a template row and recomputes its verdict.
fn remeasure(mut row: ReportRow, v: f64) -> ReportRow {
    row.slope = Some(v);
    row.pass = v.is_finite() && row.comparison.passes(v, row.predicted, row.tolerance);
    row
}

fn run_cell(ctx: &Ctx, cell: Cell) -> Vec<ReportRow> {
    match cell {
        Cell::Structure { alpha, eps } => structure_rows(ctx, alpha, eps),
        Cell::Residual { alpha } => residual_rows(ctx, alpha),
        Cell::Blowup => blowup_rows(ctx),
        Cell::Cross => cross_rows(ctx),
        Cell::Stokes => stokes_rows(ctx),
        Cell::Envelope => envelope_rows(ctx),
        Cell::Manufactured => manufactured_rows(ctx),
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Runs every selected check and assembles the report. Configuration
/// problems are returned as errors; check failures become failed rows.
pub fn run(config: &RunConfig) -> Result<RateReport> {
    let (id, profile) = config.prepare()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::input(format!("worker pool: {e}")))?;
    let ctx = Ctx { config, id: &id, profile: &profile };
    let work = cells(config, &profile);
    let per_cell: Vec<Vec<ReportRow>> = pool.install(|| {
        work.par_iter()
            .map(|&cell| {
                catch_unwind(AssertUnwindSafe(|| run_cell(&ctx, cell))).unwrap_or_else(|p| {
                    let mut row = ctx.row(
                        "internal",
                        "plumbing",
                        "",
                        None,
                        None,
                        &format!("{cell:?}"),
                        f64::NAN,
                        0.0,
                        0.0,
                        Comparison::Within,
                    );
                    row.pass = false;
                    row.slope = None;
                    row.note = format!("panic: {}", panic_message(p.as_ref()));
                    vec![row]
                })
            })
            .collect()
    });
    let fingerprint = Fingerprint {
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        timestamp: None,
    };
    Ok(RateReport::new(fingerprint, per_cell.into_iter().flatten().collect()))
}

/// Writes the report in every configured format to `dir` as
/// `rates.<ext>`; returns the paths written.
pub fn write_reports(report: &RateReport, formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    formats
        .iter()
        .map(|&f| {
            let path = dir.join(format!("rates.{}", f.extension()));
            report.emit(f, &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        RunConfig { modes: vec![1], m_max: 2, ..RunConfig::default() }
    }

    #[test]
    fn defaults_and_unknown_fields() {
        let c = RunConfig::default();
        assert_eq!(c.modes, vec![1, 2, 3]);
        assert_eq!(c.eps, DEFAULT_EPS_SWEEP.to_vec());
        assert_eq!(c.grid, GridSpec { n1: 256, n2: 64 });
        assert!(c.prepare().is_ok());
        let err = RunConfig::from_json("{\n  \"m_max\": 2,\n  \"colour\": 1\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let round = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(round, c);
        assert_eq!(round.hash(), c.hash());
        let moved = RunConfig { output_dir: Some("elsewhere".into()), ..c.clone() };
        assert_eq!(moved.hash(), c.hash());
        assert_ne!(RunConfig { m_max: 2, ..c.clone() }.hash(), c.hash());
    }

    #[test]
    fn short_eps_list_is_rejected() {
        let c = RunConfig { eps: vec![1e-2, 1e-3], ..small_config() };
        let err = c.prepare().unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        assert!(err.to_string().contains("insufficient eps span"), "{err}");
        let narrow = RunConfig { eps: vec![1e-2, 8e-3, 6e-3, 4e-3, 2e-3], ..small_config() };
        assert!(narrow.prepare().unwrap_err().to_string().contains("insufficient eps span"));
    }

    #[test]
    fn m_max_above_cap_is_rejected() {
        let c = RunConfig { m_max: 7, ..small_config() };
        let err = c.prepare().unwrap_err();
        assert!(err.to_string().contains("exceeds derivative cap"), "{err}");
        let c = RunConfig { m_max: 5, ..small_config() };
        assert!(c.prepare().is_ok());
    }

    #[test]
    fn other_config_errors() {
        let bad = [
            RunConfig { eps: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2], ..small_config() },
            RunConfig { eps: vec![1e-2, 3e-3, 0.0, 3e-4, 1e-4], ..small_config() },
            RunConfig { modes: vec![4], ..small_config() },
            RunConfig { modes: vec![1, 1], ..small_config() },
            RunConfig { m_max: 0, ..small_config() },
            RunConfig { grid: GridSpec { n1: 256, n2: 16 }, ..small_config() },
            RunConfig { checks: vec![], ..small_config() },
            RunConfig { profile: ProfileSpec::NameOrPath("no-such-profile.json".into()), ..small_config() },
        ];
        for c in bad {
            assert!(c.prepare().is_err(), "{c:?}");
        }
        let inline = r#"{"profile": {"eps": 0.01, "h1": {"poly": [0, 0, 1]}, "h2": {"poly": [0, 0, 0.5]}}, "M": 1}"#;
        assert!(RunConfig::from_json(inline).is_err());
        let inline = r#"{"profile": {"eps": 0.01, "M": 3, "h1": {"poly": [0, 0, 1]}, "h2": {"poly": [0, 0, 0.5]}}}"#;
        let c = RunConfig::from_json(inline).unwrap();
        let (id, p) = c.profile.resolve(None).unwrap();
        assert_eq!(id, "inline");
        assert!(!p.symmetric);
        assert!(c.prepare().unwrap_err().to_string().contains("exceeds derivative cap"));
    }

    #[test]
    fn profile_file_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let doc = ProfileDoc::from_profile(&NamedProfile::AsymQuadratic.profile(1e-2).unwrap());
        std::fs::write(dir.path().join("walls.json"), serde_json::to_string(&doc).unwrap()).unwrap();
        std::fs::write(dir.path().join("run.json"), r#"{"profile": "walls.json", "modes": [2]}"#).unwrap();
        let c = RunConfig::load(&dir.path().join("run.json")).unwrap();
        let (id, p) = c.prepare().unwrap();
        assert_eq!(id, "walls");
        assert_eq!(*p.h1, doc.h1);
    }

    #[test]
    fn small_sweep_passes_and_is_reproducible() {
        let c = small_config();
        let a = run(&c).unwrap();
        for r in &a.rows {
            assert!(r.pass, "{r:?}");
            assert!(!r.anchor.is_empty());
        }
        assert!(a.rows.len() >= 12, "{} rows", a.rows.len());
        for check in ["divergence", "residual-decay", "corrector-blowup", "cross-level1-gap", "stokes-local-energy"] {
            assert!(a.rows.iter().any(|r| r.check == check), "missing {check}");
        }
        let b = run(&c).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.fingerprint.config_hash.len(), 64);
    }

    #[test]
    fn failing_cells_become_rows() {
        // The residual window [2 sqrt(eps), R/2] is empty at eps = 0.04.
        let c = RunConfig {
            eps: vec![4.0, 1.0, 0.3, 0.1, 0.04],
            checks: vec![CheckKind::Residual],
            ..small_config()
        };
        let r = run(&c).unwrap();
        assert_eq!(r.rows.len(), 5);
        assert!(r.rows.iter().all(|r| !r.pass && r.slope.is_none() && !r.note.is_empty()));
    }
}
