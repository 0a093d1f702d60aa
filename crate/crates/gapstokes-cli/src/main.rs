//! Command-line front end.
//!
//! Exit status: 0 when every check passes, 1 when some check fails, 2 for
//! invalid arguments, configs or profiles.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gapstokes::fd::{self, FieldForcing, NeckGrid, SideBc};
use gapstokes::sweeps::{self, CheckKind, ProfileSpec, RunConfig};
use gapstokes::{BoundaryMode, CorrectorHierarchy, RateReport, ReportFormat};

#[derive(Parser)]
#[command(name = "gapstokes", version, about = "Corrector hierarchies and rate checks for Stokes flow in a narrow gap")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or verify corrector hierarchies.
    #[command(subcommand)]
    Corrector(CorrectorCmd),
    /// Finite-difference Stokes solves on the neck.
    #[command(subcommand)]
    Stokes(StokesCmd),
    /// Batch rate sweeps.
    #[command(subcommand)]
    Sweep(SweepCmd),
    /// Report conversion.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Subcommand)]
enum CorrectorCmd {
    /// Build a hierarchy and write its coefficient trees.
    Build(BuildArgs),
    /// Run the structural, residual, blow-up and cross checks.
    Verify(Common),
}

#[derive(Subcommand)]
enum StokesCmd {
    /// Solve with the residual of a corrector hierarchy as forcing.
    Solve(SolveArgs),
}

#[derive(Subcommand)]
enum SweepCmd {
    /// Run the configured checks and write rate reports.
    Rates(Common),
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Re-emit a JSON report in another format.
    Emit(EmitArgs),
}

/// Options shared by the config-driven commands; flags override the config.
#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile name or profile JSON path.
    #[arg(long)]
    profile: Option<String>,
    /// Boundary modes, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<u8>>,
    /// Highest residual order.
    #[arg(long)]
    m: Option<usize>,
    /// Inclusion distances, e.g. `1e-2,3e-3,1e-3`.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format, `csv` or `json`; repeatable.
    #[arg(long, value_parser = parse_format)]
    format: Vec<ReportFormat>,
    /// Checks to run, e.g. `structure,residual`.
    #[arg(long, value_delimiter = ',', value_parser = parse_check)]
    checks: Option<Vec<CheckKind>>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, default_value = "sym-quadratic")]
    profile: String,
    #[arg(long, default_value = "1")]
    alpha: u8,
    /// Number of levels.
    #[arg(long, default_value = "2")]
    m: usize,
    #[arg(long, default_value = "1e-2")]
    eps: f64,
    /// Use the kernel construction (identical walls, first mode only).
    #[arg(long)]
    kernel: bool,
    /// Output directory; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value = "sym-quadratic")]
    profile: String,
    #[arg(long, default_value = "1")]
    alpha: u8,
    /// Residual order: the forcing is the residual after `m + 1` levels.
    #[arg(long, default_value = "1")]
    m: usize,
    #[arg(long, default_value = "1e-2")]
    eps: f64,
    /// Grid cells along the neck and across the gap.
    #[arg(long, value_delimiter = ',', default_values_t = [fd::DEFAULT_N1, fd::DEFAULT_N2])]
    grid: Vec<usize>,
    /// Directory for the CSV point cloud.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmitArgs {
    /// JSON report to read.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_format, default_value = "csv")]
    format: ReportFormat,
    /// Output file or directory; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    ReportFormat::parse(s).map_err(|e| e.to_string())
}

fn parse_check(s: &str) -> std::result::Result<CheckKind, String> {
    CheckKind::parse(s).map_err(|e| e.to_string())
}

/// A failure that maps to exit status 1 rather than 2.
#[derive(Debug)]
struct ChecksFailed(usize);

impl std::fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} check(s) failed", self.0)
    }
}

impl std::error::Error for ChecksFailed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Corrector(CorrectorCmd::Build(a)) => corrector_build(a),
        Command::Corrector(CorrectorCmd::Verify(c)) => {
            let defaults = vec![CheckKind::Structure, CheckKind::Residual, CheckKind::Blowup, CheckKind::Cross];
            rates(c, Some(defaults))
        }
        Command::Stokes(StokesCmd::Solve(a)) => stokes_solve(a),
        Command::Sweep(SweepCmd::Rates(c)) => rates(c, None),
        Command::Report(ReportCmd::Emit(a)) => report_emit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<ChecksFailed>() => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_profile(name: &str, eps: f64) -> Result<(String, gapstokes::NeckProfile)> {
    let (id, p) = ProfileSpec::NameOrPath(name.into()).resolve(None)?;
    Ok((id, p.with_eps(eps)?))
}

fn corrector_build(a: BuildArgs) -> Result<()> {
    let (id, p) = load_profile(&a.profile, a.eps)?;
    let h = if a.kernel {
        if a.alpha != 1 {
            bail!("the kernel construction covers mode 1 only");
        }
        CorrectorHierarchy::build_symmetric_kernel(&p, a.m)?
    } else {
        CorrectorHierarchy::build(&p, BoundaryMode::from_alpha(a.alpha)?, a.m)?
    };
    let text = h.dump();
    match a.out {
        Some(dir) => {
            let kind = if a.kernel { "kernel" } else { "general" };
            let path = dir.join(format!("corrector-{id}-alpha{}-{kind}-eps{:e}.txt", a.alpha, a.eps));
            write_file(&path, &text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn stokes_solve(a: SolveArgs) -> Result<()> {
    if a.grid.len() != 2 {
        bail!("--grid takes two sizes, e.g. 256,64");
    }
    let (id, p) = load_profile(&a.profile, a.eps)?;
    let h = CorrectorHierarchy::build(&p, BoundaryMode::from_alpha(a.alpha)?, a.m + 1)?;
    let f = FieldForcing::new(h.residual(a.m + 1), gapstokes::verifier::EVAL_TOL)?;
    let grid = Arc::new(NeckGrid::new(&p, 1.5 * p.r, a.grid[0], a.grid[1])?);
    let sol = fd::solve_w(&p, &f, &SideBc::Zero, &grid)?;
    println!("profile {id}, alpha {}, m {}, eps {:e}, grid {}x{}", a.alpha, a.m, a.eps, a.grid[0], a.grid[1]);
    println!("relative residual   {:.3e}", sol.residual);
    println!("max divergence      {:.3e}", sol.max_divergence);
    println!("energy              {:.6e}", fd::global_energy(&sol));
    println!("sup |grad w| (|x1|<=R) {:.6e}", fd::sup_grad(&sol, (-p.r, p.r))?);
    if let Some(dir) = a.out {
        let path = dir.join(format!("stokes-{id}-alpha{}-m{}-eps{:e}.csv", a.alpha, a.m, a.eps));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        sol.write_csv(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn build_config(c: &Common, default_checks: Option<Vec<CheckKind>>) -> Result<RunConfig> {
    let mut config = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let (Some(checks), None) = (default_checks, &c.config) {
        config.checks = checks;
    }
    if let Some(p) = &c.profile {
        config.profile = ProfileSpec::NameOrPath(p.clone());
    }
    if let Some(a) = &c.alpha {
        config.modes = a.clone();
    }
    if let Some(m) = c.m {
        config.m_max = m;
    }
    if let Some(e) = &c.eps {
        config.eps = e.clone();
    }
    if let Some(o) = &c.out {
        config.output_dir = Some(o.clone());
    }
    if !c.format.is_empty() {
        config.formats = c.format.clone();
    }
    if let Some(k) = &c.checks {
        config.checks = k.clone();
    }
    config.prepare()?;
    Ok(config)
}

fn rates(c: Common, default_checks: Option<Vec<CheckKind>>) -> Result<()> {
    let config = build_config(&c, default_checks)?;
    let mut report = sweeps::run(&config)?;
    report.fingerprint.timestamp = Some(timestamp());
    for row in &report.rows {
        let opt = |v: Option<usize>| v.map_or_else(|| "-".into(), |v| v.to_string());
        let value = row.slope.map_or_else(|| "-".into(), |v| format!("{v:.4e}"));
        println!(
            "{} {} alpha={} m={} s={} [{}] measured={value} predicted={:e} tol={} {}",
            if row.pass { "PASS" } else { "FAIL" },
            row.check,
            row.alpha,
            opt(row.m),
            opt(row.s),
            row.window,
            row.predicted,
            row.tolerance,
            row.note
        );
    }
    if let Some(dir) = &config.output_dir {
        for path in sweeps::write_reports(&report, &config.formats, dir)? {
            println!("wrote {}", path.display());
        }
    }
    let failed = report.failures().count();
    println!("{} rows, {} failed", report.rows.len(), failed);
    if failed > 0 {
        return Err(ChecksFailed(failed).into());
    }
    Ok(())
}

fn report_emit(a: EmitArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let report = RateReport::from_json(&text).with_context(|| a.input.display().to_string())?;
    match a.out {
        Some(out) => {
            let path = if out.is_dir() { out.join(format!("rates.{}", a.format.extension())) } else { out };
            report.emit(a.format, &path)?;
            println!("wrote {}", path.display());
        }
        None => print!("{}", report.render(a.format)),
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Seconds since the Unix epoch.
fn timestamp() -> String {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0).to_string()
}
