//! Rate-check report rows and their CSV / JSON serialization.
//!
//! CSV columns, in order:
//! `check, profile_id, alpha, m, s, window, slope, predicted, tolerance,
//! comparison, pass, anchor, note`. Empty cells mean "not applicable".
//! The JSON form is a [`RateReport`] tagged with [`SCHEMA_VERSION`].

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: &str =
    "check,profile_id,alpha,m,s,window,slope,predicted,tolerance,comparison,pass,anchor,note";

/// How a measured slope is compared with the prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    /// `slope >= predicted - tolerance`.
    AtLeast,
    /// `|slope - predicted| <= tolerance`.
    Within,
    /// `measured <= predicted` for ratio-type checks (predicted is the bound).
    AtMost,
}

impl Comparison {
    pub fn passes(self, measured: f64, predicted: f64, tolerance: f64) -> bool {
        match self {
            Comparison::AtLeast => measured >= predicted - tolerance,
            Comparison::Within => (measured - predicted).abs() <= tolerance,
            Comparison::AtMost => measured <= predicted + tolerance,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Comparison::AtLeast => "at-least",
            Comparison::Within => "within",
            Comparison::AtMost => "at-most",
        }
    }
}

/// One checked quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub check: String,
    pub profile_id: String,
    /// Boundary mode(s) involved, e.g. `"2"` or `"1,2,3"`.
    pub alpha: String,
    pub m: Option<usize>,
    pub s: Option<usize>,
    pub window: String,
    /// Measured value; `None` when the measurement itself failed.
    pub slope: Option<f64>,
    pub predicted: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
    /// Which estimate the row exercises, or `"plumbing"`.
    pub anchor: String,
    /// Error text for rows whose measurement failed; empty otherwise.
    pub note: String,
}

impl ReportRow {
    /// A row whose pass flag is derived from the comparison.
    #[allow(clippy::too_many_arguments)]
    pub fn measured(
        check: &str,
        anchor: &str,
        profile_id: &str,
        alpha: &str,
        m: Option<usize>,
        s: Option<usize>,
        window: &str,
        slope: f64,
        predicted: f64,
        tolerance: f64,
        comparison: Comparison,
    ) -> Self {
        ReportRow {
            check: check.into(),
            profile_id: profile_id.into(),
            alpha: alpha.into(),
            m,
            s,
            window: window.into(),
            slope: Some(slope),
            predicted,
            tolerance,
            comparison,
            pass: slope.is_finite() && comparison.passes(slope, predicted, tolerance),
            anchor: anchor.into(),
            note: String::new(),
        }
    }

    /// A failed row carrying the error that prevented the measurement.
    pub fn failed(mut self, err: &Error) -> Self {
        self.slope = None;
        self.pass = false;
        self.note = err.to_string();
        self
    }

    fn csv_line(&self) -> String {
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let slope = self.slope.map(fmt_f64).unwrap_or_default();
        [
            csv_field(&self.check),
            csv_field(&self.profile_id),
            csv_field(&self.alpha),
            opt(self.m),
            opt(self.s),
            csv_field(&self.window),
            slope,
            fmt_f64(self.predicted),
            fmt_f64(self.tolerance),
            self.comparison.label().to_string(),
            self.pass.to_string(),
            csv_field(&self.anchor),
            csv_field(&self.note),
        ]
        .join(",")
    }
}

/// Identifies the code and configuration that produced a report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub version: String,
    /// SHA-256 of the canonical configuration JSON.
    pub config_hash: String,
    /// Wall-clock creation time; excluded from reproducibility checks.
    pub timestamp: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub schema_version: u32,
    pub fingerprint: Fingerprint,
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::input(format!("unknown report format '{other}'"))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl RateReport {
    pub fn new(fingerprint: Fingerprint, rows: Vec<ReportRow>) -> Self {
        RateReport { schema_version: SCHEMA_VERSION, fingerprint, rows }
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CSV_HEADER}").unwrap();
        for r in &self.rows {
            writeln!(out, "{}", r.csv_line()).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report rows serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::input(format!("report JSON at line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }

    /// Writes the report to `path`, creating parent directories.
    pub fn emit(&self, format: ReportFormat, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: path.display().to_string(), detail: e.to_string() };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(path, self.render(format)).map_err(io)
    }
}

/// Shortest round-trip decimal form; stable across runs and platforms.
fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        String::new()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp() -> Fingerprint {
        Fingerprint { version: "0.1.0".into(), config_hash: "abc".into(), timestamp: None }
    }

    fn row(i: usize) -> ReportRow {
        ReportRow::measured(
            "residual-decay",
            "residual decay",
            "sym-quadratic",
            "1",
            Some(i),
            Some(0),
            "x1 in [2sqrt(eps), R/2], eps=1e-4",
            0.5 + i as f64,
            i as f64 - 1.0,
            0.25,
            Comparison::AtLeast,
        )
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = RateReport::new(fp(), vec![]);
        assert_eq!(r.to_csv(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn three_rows_give_four_lines() {
        let r = RateReport::new(fp(), (1..=3).map(row).collect());
        assert_eq!(r.to_csv().lines().count(), 4);
        assert!(r.to_csv().lines().nth(1).unwrap().contains("\"x1 in [2sqrt(eps), R/2], eps=1e-4\""));
    }

    #[test]
    fn json_round_trip() {
        let mut rows: Vec<_> = (1..=3).map(row).collect();
        rows.push(row(4).failed(&Error::Capability { order: 7, cap: 6 }));
        let r = RateReport::new(fp(), rows);
        assert_eq!(RateReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn comparisons() {
        assert!(Comparison::AtLeast.passes(0.8, 1.0, 0.25));
        assert!(!Comparison::AtLeast.passes(0.7, 1.0, 0.25));
        assert!(Comparison::Within.passes(-1.04, -1.0, 0.05));
        assert!(!Comparison::Within.passes(-0.9, -1.0, 0.05));
        assert!(Comparison::AtMost.passes(2.5, 3.0, 0.0));
    }
}
