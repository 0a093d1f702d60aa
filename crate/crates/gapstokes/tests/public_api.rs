//! End-to-end use of the public API: a user-supplied profile, a hierarchy
//! built on it, and a small batch run with its reports.

use gapstokes::geometry::parse_profile_json;
use gapstokes::sweeps::{self, ProfileSpec};
use gapstokes::verifier::structure_checks;
use gapstokes::{BoundaryMode, CheckKind, CorrectorHierarchy, RateReport, ReportFormat, RunConfig};

const CUBIC_PERTURBED: &str = r#"{
    "eps": 0.01,
    "R": 0.5,
    "h1": {"poly": [0, 0, 0.5, 0.1]},
    "h2": {"poly": [0, 0, 0.5]}
}"#;

#[test]
fn hierarchy_on_a_custom_profile_is_exact() {
    let p = parse_profile_json(CUBIC_PERTURBED).unwrap();
    for mode in BoundaryMode::ALL {
        let h = CorrectorHierarchy::build(&p, mode, 3).unwrap();
        for c in structure_checks(&h).unwrap() {
            assert!(c.pass(), "{mode} level {}: {c:?}", c.level);
        }
    }
}

#[test]
fn malformed_profile_reports_position() {
    let err = parse_profile_json("{\"eps\": 0.01,\n \"h1\": 3}").unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn batch_run_with_inline_profile_round_trips() {
    let mut config = RunConfig::from_json(&format!(
        r#"{{"profile": {CUBIC_PERTURBED}, "modes": [2], "m_max": 1,
            "checks": ["structure", "residual"]}}"#
    ))
    .unwrap();
    assert!(matches!(config.profile, ProfileSpec::Inline(_)));
    assert_eq!(config.checks, vec![CheckKind::Structure, CheckKind::Residual]);

    let dir = tempfile::tempdir().unwrap();
    config.output_dir = Some(dir.path().to_path_buf());
    let report = sweeps::run(&config).unwrap();
    assert!(report.all_pass(), "{}", report.to_csv());
    assert!(report.rows.iter().all(|r| r.profile_id == "inline" && r.alpha == "2"));

    let written = sweeps::write_reports(&report, &[ReportFormat::Json, ReportFormat::Csv], dir.path()).unwrap();
    assert_eq!(written.len(), 2);
    let back = RateReport::from_json(&std::fs::read_to_string(dir.path().join("rates.json")).unwrap()).unwrap();
    assert_eq!(back, report);
    let csv = std::fs::read_to_string(dir.path().join("rates.csv")).unwrap();
    assert_eq!(csv.lines().count(), report.rows.len() + 1);
}
