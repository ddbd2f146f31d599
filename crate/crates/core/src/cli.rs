//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 I/O or malformed input,
//! 3 a prerequisite failed (reports are still written).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::conformal::ConformalMetric;
use crate::distances;
use crate::error::{Error, Result};
use crate::estimates::{self, HypothesisBudget};
use crate::io;
use crate::mask::{ball_family, BallFamily};
use crate::report::{to_csv, CheckReport, Status};
use crate::sequences::{self, PipelineReport, SequenceSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_PREREQ: i32 = 3;

/// Default output directory when `--out` is absent.
pub const OUT_ENV: &str = "CONFTORUS_OUT";

#[derive(Parser, Debug)]
#[command(name = "conftorus", version, about = "Checks on conformally flat tori with almost non-negative scalar curvature")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate sequence members as field files.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        /// Index to generate; all indices when omitted.
        #[arg(long)]
        j: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a check suite on one field file.
    Check {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        j: u64,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        /// Sequence spec supplying the budget and ball-family parameters.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Graph distance between two points, as JSON.
    Geodesic {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        to: Vec<f64>,
    },
    /// Sweep a sequence: pipeline.json, checks.csv and metrics.csv.
    Pipeline {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write consistency.json.
        #[arg(long)]
        consistency: bool,
    },
    /// Render a stored pipeline.json.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Scalar,
    Pde,
    Sobolev,
    Jensen,
    C0,
    Ui,
    All,
}

impl Suite {
    /// Parses a suite name as accepted on the command line.
    pub fn from_name(name: &str) -> Option<Self> {
        <Self as ValueEnum>::from_str(name, true).ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Json(_) | Error::Format(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_spec(path: &Path) -> Result<SequenceSpec> {
    SequenceSpec::from_toml(&fs::read_to_string(path)?)
}

/// Parses `args` (program name first), runs the command, and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn any_prereq<'a>(reports: impl IntoIterator<Item = &'a CheckReport>) -> bool {
    reports.into_iter().any(|r| r.status == Status::Prereq)
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Gen { spec, j, out } => {
            let spec = load_spec(&spec)?;
            let dir = out_dir(out);
            let js = match j {
                Some(j) => vec![j],
                None => spec.indices.clone(),
            };
            for j in js {
                let g = sequences::generate(&spec, j)?;
                let path = dir.join(format!("f_j{j}.bin"));
                io::write_conformal(&path, &g.metric)?;
                writeln!(stdout, "{}", path.display())?;
                if let Some(bg) = &g.background_field {
                    let path = dir.join(format!("g_j{j}.bin"));
                    io::write_metric_field(&path, bg, g.metric.background())?;
                    writeln!(stdout, "{}", path.display())?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Check {
            field,
            j,
            suite,
            spec,
            radius,
            format,
            out,
        } => {
            let m = io::read_conformal(&field)?;
            let spec = spec.as_deref().map(load_spec).transpose()?;
            let budget = match &spec {
                Some(s) => {
                    let mut b = s.budget_for(j)?;
                    b.j = j;
                    b
                }
                None => HypothesisBudget::new(j, m.dim()),
            };
            budget.validate(m.dim())?;
            let family = spec
                .as_ref()
                .map(|s| BallFamily {
                    centers: s.pipeline.ball_centers,
                    radii: s.pipeline.ball_radii,
                    seed: s.seed,
                })
                .unwrap_or_default();
            let reports = run_suite(&m, &budget, suite, radius, &family)?;
            let text = render_reports(reports.iter().map(|r| (Some(j), r)), format);
            match out {
                Some(p) => io::write_atomic(&p, text.as_bytes())?,
                None => stdout.write_all(text.as_bytes())?,
            }
            Ok(if any_prereq(&reports) { EXIT_PREREQ } else { EXIT_OK })
        }
        Command::Geodesic { field, from, to } => {
            let m = io::read_conformal(&field)?;
            let g = distances::geodesic_distance(&m, &from, &to)?;
            writeln!(stdout, "{}", serde_json::to_string(&g)?)?;
            Ok(EXIT_OK)
        }
        Command::Pipeline { spec, out, consistency } => {
            let spec = load_spec(&spec)?;
            let dir = out_dir(out);
            let report = sequences::run_pipeline(&spec)?;
            io::write_atomic(&dir.join("pipeline.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
            io::write_atomic(&dir.join("checks.csv"), render_pipeline(&report, Format::Csv).as_bytes())?;
            io::write_atomic(&dir.join("metrics.csv"), report.metrics_csv().as_bytes())?;
            if consistency {
                let c = sequences::convergence_consistency(&spec)?;
                io::write_atomic(&dir.join("consistency.json"), serde_json::to_string_pretty(&c)?.as_bytes())?;
            }
            writeln!(stdout, "{}", dir.join("pipeline.json").display())?;
            let prereq = report.rows.iter().any(|r| r.error.is_some() || any_prereq(&r.reports));
            Ok(if prereq { EXIT_PREREQ } else { EXIT_OK })
        }
        Command::Report { input, format } => {
            let text = fs::read_to_string(&input)?;
            let report: PipelineReport =
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", input.display())))?;
            stdout.write_all(render_pipeline(&report, format).as_bytes())?;
            Ok(EXIT_OK)
        }
    }
}

/// Runs one suite against a budget.
pub fn run_suite(
    m: &ConformalMetric,
    budget: &HypothesisBudget,
    suite: Suite,
    radius: f64,
    family: &BallFamily,
) -> Result<Vec<CheckReport>> {
    let all = suite == Suite::All;
    let mut out = Vec::new();
    if all || suite == Suite::Scalar {
        out.push(estimates::check_scalar_lower_bound(m, budget.eps())?);
    }
    if all || suite == Suite::Pde {
        out.extend(estimates::check_conformal_pde(m, budget)?);
    }
    if all || suite == Suite::Sobolev {
        out.extend(estimates::check_sobolev_triple(m, budget)?);
    }
    if all || suite == Suite::Jensen {
        out.extend(estimates::jensen_sandwich(m, budget)?);
    }
    if all || suite == Suite::C0 {
        let c0 = estimates::c0_lower_bound(m, radius, budget.j)?;
        out.push(c0.corrected);
        out.push(c0.displayed);
    }
    if all || suite == Suite::Ui {
        let spec = m.exponent().spec();
        let density = m.exp_field(m.dim() as f64)?;
        let masks = ball_family(spec, m.background(), family, &[density.argmax()])?;
        out.push(estimates::ui_fit(m, &masks, budget)?);
    }
    Ok(out)
}

/// Text table or CSV of `(j, report)` rows; vacuous checks show as `PREREQ`.
pub fn render_reports<'a>(rows: impl IntoIterator<Item = (Option<u64>, &'a CheckReport)>, format: Format) -> String {
    match format {
        Format::Csv => to_csv(rows),
        Format::Text => {
            let mut s = format!(
                "{:>6}  {:<40} {:<6} {:>13} {:>13} {:>13}\n",
                "j", "check", "status", "lhs", "rhs", "slack"
            );
            for (j, r) in rows {
                s.push_str(&format!(
                    "{:>6}  {:<40} {:<6} {:>13.6e} {:>13.6e} {:>13.6e}\n",
                    j.map(|j| j.to_string()).unwrap_or_default(),
                    r.name,
                    r.status.label(),
                    r.lhs,
                    r.rhs,
                    r.slack
                ));
                if let Some(n) = &r.note {
                    s.push_str(&format!("{:>8}{n}\n", ""));
                }
            }
            s
        }
    }
}

/// Renders a pipeline report: checks, then fits and the bubbling verdict in text mode.
pub fn render_pipeline(report: &PipelineReport, format: Format) -> String {
    let rows = report.all_reports().map(|(j, r)| (Some(j), r));
    if format == Format::Csv {
        return render_reports(rows, format);
    }
    let mut s = String::new();
    if let Some(c) = &report.candidate_limit {
        s.push_str(&format!(
            "candidate limit: c = {:.6e} from j = {} (oscillation {:.3e})\n",
            c.c_infinity, c.from_j, c.oscillation
        ));
    }
    s.push_str(&format!(
        "uniform integrability: Cui = {:.6e}, q = {}\n",
        report.ui_constant, report.ui_exponent
    ));
    for r in &report.rows {
        if let Some(e) = &r.error {
            s.push_str(&format!("j = {}: error: {e}\n", r.j));
        }
    }
    s.push_str(&render_reports(rows, format));
    for f in &report.fits {
        s.push_str(&format!("fit {:<36} slope {:+.4} over {} points\n", f.quantity, f.slope, f.points));
    }
    match report.bubbling.j_star {
        Some(j) => s.push_str(&format!("bubbling detected at j = {j}\n")),
        None => s.push_str("no bubbling detected\n"),
    }
    s
}
