use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use slag_core::config::{Example, RunConfig};
use slag_core::pipeline::{
    angle_series, export_samples, parse_level_range, run_scan, run_verify, run_verify_pieces, VerifyOutcome,
};
use slag_core::stenzel::{build_potential, build_potential_with_grid};
use slag_core::verify::VerificationReport;
use slag_core::SlagError;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RANGE: u8 = 3;
const EXIT_EMPTY: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "slag", version, about = "Build and certify special Lagrangian submanifolds of T*S^n")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the Stenzel potential and write it as JSON.
    #[command(allow_negative_numbers = true)]
    Potential(Shared),
    /// Run the full certification for one example and level.
    #[command(allow_negative_numbers = true)]
    Verify {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        level: LevelArgs,
        /// Certify each of the five pieces of the so223 level set at (0, 0).
        #[arg(long)]
        pieces: bool,
    },
    /// Reduced verification over a range of levels, as CSV.
    #[command(allow_negative_numbers = true)]
    Scan {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        level: LevelArgs,
        /// Levels as lo:hi:step (inclusive).
        #[arg(long, allow_hyphen_values = true)]
        levels: String,
    },
    /// Dump swept samples or the angle series as CSV.
    #[command(allow_negative_numbers = true)]
    Export {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        level: LevelArgs,
        #[arg(long, value_enum, default_value_t = What::Samples)]
        what: What,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Samples,
    AngleSeries,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Args)]
struct Shared {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long, visible_alias = "report")]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    tol_omega: Option<f64>,
    #[arg(long)]
    tol_perp: Option<f64>,
    #[arg(long)]
    tol_angle: Option<f64>,
    #[arg(long)]
    tol_phase: Option<f64>,
    #[arg(long)]
    h_grid: Option<usize>,
    #[arg(long)]
    v_count: Option<usize>,
    /// Minimum number of swept samples; sets the level-set sample count.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct LevelArgs {
    #[arg(long)]
    example: Option<String>,
    /// Level of a U(1) example.
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
}

enum CliError {
    Usage(String),
    Core(SlagError),
    Io(String),
}

impl From<SlagError> for CliError {
    fn from(e: SlagError) -> Self {
        match e {
            SlagError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Core(SlagError::Range(_)) => EXIT_RANGE,
            CliError::Core(SlagError::Config(_) | SlagError::Precondition(_) | SlagError::Index(_)) => EXIT_USAGE,
            CliError::Core(_) => EXIT_FAIL,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Io(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn load_config(shared: &Shared, level: Option<&LevelArgs>) -> Result<RunConfig, CliError> {
    let mut cfg = match &shared.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            toml::from_str::<RunConfig>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(level) = level {
        if let Some(e) = &level.example {
            cfg.example = e.parse::<Example>()?;
        }
        match cfg.example {
            Example::U1L1 | Example::U1L2 => {
                if level.c1.is_some() || level.c2.is_some() {
                    return Err(CliError::Usage(format!("--c1/--c2 apply to so223, not {}", cfg.example)));
                }
                if let Some(l) = level.level {
                    cfg.levels = vec![l];
                }
            }
            Example::So223 => {
                if level.level.is_some() {
                    return Err(CliError::Usage("so223 takes --c1 and --c2, not --level".into()));
                }
                if level.c1.is_some() || level.c2.is_some() {
                    let old = if cfg.levels.len() == 2 { cfg.levels.clone() } else { vec![0.0, 0.0] };
                    cfg.levels = vec![level.c1.unwrap_or(old[0]), level.c2.unwrap_or(old[1])];
                }
            }
            Example::Conormal => {
                if level.level.is_some() || level.c1.is_some() || level.c2.is_some() {
                    return Err(CliError::Usage("the conormal example takes no level".into()));
                }
            }
        }
    }
    if let Some(n) = shared.n {
        cfg.n = Some(n);
    }
    if let Some(seed) = shared.seed {
        cfg.sampling.seed = seed;
    }
    let positive = |name: &str, v: Option<f64>| -> Result<Option<f64>, CliError> {
        match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::Usage(format!("--{name} must be positive, got {x}"))),
            other => Ok(other),
        }
    };
    if let Some(c) = positive("c", shared.c)? {
        cfg.ode.c = c;
    }
    if let Some(t) = positive("t-max", shared.t_max)? {
        cfg.ode.t_max = t;
    }
    if let Some(t) = positive("tol", shared.tol)? {
        cfg.ode.tol = t;
    }
    if shared.grid_size.is_some() {
        cfg.ode.grid_size = shared.grid_size;
    }
    let tols = [
        ("tol-omega", shared.tol_omega, &mut cfg.tolerances.omega),
        ("tol-perp", shared.tol_perp, &mut cfg.tolerances.perp),
        ("tol-angle", shared.tol_angle, &mut cfg.tolerances.angle),
        ("tol-phase", shared.tol_phase, &mut cfg.tolerances.phase),
    ];
    for (name, v, slot) in tols {
        if let Some(v) = v {
            if !(v > 0.0 && v < 1.0) {
                return Err(CliError::Usage(format!("--{name} must lie in (0, 1), got {v}")));
            }
            *slot = v;
        }
    }
    if let Some(h) = shared.h_grid {
        if h == 0 {
            return Err(CliError::Usage("--h-grid must be positive".into()));
        }
        cfg.sampling.h_grid = Some(h);
    }
    if let Some(v) = shared.v_count {
        cfg.sampling.v_count = Some(v);
    }
    if let Some(s) = shared.samples {
        if s == 0 {
            return Err(CliError::Usage("--samples must be positive".into()));
        }
        cfg = cfg.with_swept_samples(s);
    }
    if level.is_some() {
        cfg = cfg.resolved()?;
    } else {
        cfg.validate_numerics()?;
    }
    Ok(cfg)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| io_err(path, e)),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string())),
    }
}

fn cmd_potential(shared: &Shared) -> Result<u8, CliError> {
    let cfg = load_config(shared, None)?;
    let n = cfg.n.unwrap_or(cfg.example.n());
    let ode = &cfg.ode;
    let table = match ode.grid_size {
        Some(g) => build_potential_with_grid(n, ode.c, ode.t_max, ode.tol, g)?,
        None => build_potential(n, ode.c, ode.t_max, ode.tol)?,
    };
    let (u1, _) = table.u_derivatives(1.0)?;
    let big = table.u_prime_t(ode.t_max)?;
    println!("n = {n}, c = {}, t_max = {}, grid = {}", ode.c, ode.t_max, table.t_grid().len());
    println!("u'(1) = {u1:.15e}");
    println!("U'(t_max) = {big:.15e}");
    if let Some(path) = &shared.out {
        write_output(Some(path), &table.to_json()?)?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn summarize(report: &VerificationReport, indent: &str) {
    for c in &report.checks {
        println!("{indent}{:<26} {:>12.3e} < {:<9.1e} {}", c.name, c.residual, c.tol, if c.pass { "pass" } else { "FAIL" });
    }
    for p in &report.pieces {
        println!("{indent}piece {}: {}", p.example, if p.pass { "pass" } else { "FAIL" });
        summarize(p, "    ");
    }
}

fn cmd_verify(shared: &Shared, level: &LevelArgs, pieces: bool) -> Result<u8, CliError> {
    let cfg = load_config(shared, Some(level))?;
    let (report, empty) = if pieces {
        (run_verify_pieces(&cfg)?, false)
    } else {
        match run_verify(&cfg)? {
            VerifyOutcome::Report(r, _) => (r, false),
            VerifyOutcome::Empty(r) => (r, true),
        }
    };
    summarize(&report, "  ");
    if let Some(path) = &shared.out {
        write_output(Some(path), &report.to_json()?)?;
    }
    if empty {
        println!("{} at {:?}: level set is empty", cfg.example, cfg.levels);
        return Ok(EXIT_EMPTY);
    }
    println!(
        "{} at {:?}: {} (angle {:.12} mod pi, shift {:.12} predicted {:.12})",
        cfg.example,
        cfg.levels,
        if report.pass { "PASS" } else { "FAIL" },
        report.angle.mean_mod_pi,
        report.angle.observed_shift,
        report.angle.predicted_shift
    );
    Ok(if report.pass { 0 } else { EXIT_FAIL })
}

fn csv_text<F>(fill: F) -> Result<String, CliError>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    fill(&mut w).map_err(|e| CliError::Io(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:e}")
    }
}

fn cmd_scan(shared: &Shared, level: &LevelArgs, levels: &str) -> Result<u8, CliError> {
    let grid = parse_level_range(levels).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cfg = load_config(shared, Some(level))?;
    if shared.v_count.is_none() && shared.samples.is_none() {
        cfg.sampling.v_count = Some(4);
    }
    let rows = run_scan(&cfg, &grid)?;
    let text = csv_text(|w| {
        w.write_record(["level", "attainable", "empty", "pass", "isotropy", "perpendicularity", "angle_stddev", "phase_distance"])?;
        for r in &rows {
            w.write_record([
                format!("{}", r.level),
                r.attainable.to_string(),
                r.empty.to_string(),
                r.pass.to_string(),
                num(r.isotropy),
                num(r.perpendicularity),
                num(r.angle_stddev),
                num(r.phase_distance),
            ])?;
        }
        Ok(())
    })?;
    write_output(shared.out.as_deref(), &text)?;
    Ok(if rows.iter().all(|r| r.pass || r.empty) { 0 } else { EXIT_FAIL })
}

fn cmd_export(shared: &Shared, level: &LevelArgs, what: What) -> Result<u8, CliError> {
    let cfg = load_config(shared, Some(level))?;
    let text = match what {
        What::Samples => {
            let Some(export) = export_samples(&cfg)? else {
                eprintln!("level set is empty");
                return Ok(EXIT_EMPTY);
            };
            let id = export.example.id();
            csv_text(|w| {
                w.write_record(export.header())?;
                for r in &export.rows {
                    let mut rec = vec![id.to_string()];
                    for vals in [&r.group_coords, &r.chart_coords, &r.z_re, &r.z_im, &r.mu] {
                        rec.extend(vals.iter().map(|v| format!("{v:e}")));
                    }
                    rec.push(format!("{:e}", r.theta));
                    w.write_record(rec)?;
                }
                Ok(())
            })?
        }
        What::AngleSeries => {
            let Some(series) = angle_series(&cfg)? else {
                eprintln!("level set is empty");
                return Ok(EXIT_EMPTY);
            };
            csv_text(|w| {
                w.write_record(["index", "theta_mod_pi"])?;
                for (i, t) in series {
                    w.write_record([i.to_string(), format!("{t:e}")])?;
                }
                Ok(())
            })?
        }
    };
    write_output(shared.out.as_deref(), &text)?;
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Potential(shared) => cmd_potential(shared),
        Command::Verify { shared, level, pieces } => cmd_verify(shared, level, *pieces),
        Command::Scan { shared, level, levels } => cmd_scan(shared, level, levels),
        Command::Export { shared, level, what, format: Format::Csv } => cmd_export(shared, level, *what),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
