//! `sgmls`: solve, convergence studies, flux probes and point-cloud generation.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use config::{Axis, RunConfig, SchemeId};
use staggered_gmls::output::{write_field_csv, write_probe_csv, write_vtk};
use staggered_gmls::problems::{generate_cloud, probe_line, run_convergence, solve_on_cloud, ConvergenceReport, Solution};

#[derive(Parser)]
#[command(name = "sgmls", version, about = "Staggered GMLS solver for -div(mu grad phi) = f on point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once and write the field as CSV and legacy VTK.
    Solve(CmdArgs),
    /// Errors and fitted rates over a list of resolutions.
    Convergence(CmdArgs),
    /// Flux samples along an axis-aligned line.
    Probe(CmdArgs),
    /// Write the point cloud only.
    Generate(CmdArgs),
}

#[derive(clap::Args)]
struct CmdArgs {
    /// JSON config; flags override its keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<staggered_gmls::Error> for Failure {
    fn from(e: staggered_gmls::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn resolve(args: CmdArgs, name: &str) -> Result<RunConfig, Failure> {
    let base = match &args.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    let cfg = base.overlay(args.run);
    if cfg.problem.is_none() {
        let mut cmd = Cli::command();
        cmd.build();
        let usage = cmd.find_subcommand_mut(name).map(|c| c.render_usage().to_string()).unwrap_or_default();
        return Err(Failure::Usage(format!("missing problem id (set `problem` in the config or pass --problem)\n\n{usage}")));
    }
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Solve(a) => cmd_solve(&resolve(a, "solve")?),
        Command::Convergence(a) => cmd_convergence(&resolve(a, "convergence")?),
        Command::Probe(a) => cmd_probe(&resolve(a, "probe")?),
        Command::Generate(a) => cmd_generate(&resolve(a, "generate")?),
    }
}

fn solve(cfg: &RunConfig) -> Result<Solution, Failure> {
    let problem = cfg.problem().map_err(Failure::Usage)?;
    let dx = cfg.spacing().map_err(Failure::Usage)?;
    let opts = cfg.options();
    let cloud = generate_cloud(&problem, dx, &opts)?;
    let sol = solve_on_cloud(&problem, cloud, &opts)?;
    let r = &sol.report;
    eprintln!(
        "points {}  solver {}  iterations {}  residual {:.3e}  time {:.3}s",
        sol.cloud.len(),
        r.solver,
        r.iterations,
        r.relative_residual,
        r.wall_time.as_secs_f64()
    );
    if let (Some(l2), Some(h1)) = (sol.error_l2(&problem), sol.error_h1(&problem)) {
        eprintln!("e_l2 {l2:.6e}  e_h1 {h1:.6e}");
    }
    Ok(sol)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))
}

/// File at `path`, or stdout when no path is configured.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_solve(cfg: &RunConfig) -> Result<(), Failure> {
    let sol = solve(cfg)?;
    let prefix = cfg.output.clone().unwrap_or_else(|| PathBuf::from("solution"));
    let csv_path = with_suffix(&prefix, ".csv");
    let vtk_path = with_suffix(&prefix, ".vtk");
    write_field_csv(&sol.cloud, &sol.phi, &sol.flux, create(&csv_path)?)?;
    write_vtk(&sol.cloud, &sol.phi, &sol.flux, &sol.stencils.mu, create(&vtk_path)?)?;
    eprintln!("wrote {} and {}", csv_path.display(), vtk_path.display());
    Ok(())
}

fn summarize(label: &str, r: &ConvergenceReport) {
    eprintln!("{label}: rate_l2 {:.3}  rate_h1 {:.3}", r.rate_l2, r.rate_h1);
}

fn cmd_convergence(cfg: &RunConfig) -> Result<(), Failure> {
    let resolutions = cfg.resolutions.clone().ok_or_else(|| Failure::Usage("resolutions are required".into()))?;
    if resolutions.len() < 3 {
        return Err(Failure::Usage(format!("need >= 3 resolutions, got {}", resolutions.len())));
    }
    let problem = cfg.problem().map_err(Failure::Usage)?;
    let report = run_convergence(&problem, &resolutions, &cfg.options())?;
    summarize("staggered", &report);
    let collocated = if cfg.compare_collocated {
        let mut c = cfg.clone();
        c.scheme = Some(SchemeId::Collocated);
        let r = run_convergence(&problem, &resolutions, &c.options())?;
        summarize("collocated", &r);
        Some(r)
    } else {
        None
    };
    match &cfg.output {
        Some(path) => {
            report.write_csv(create(path)?)?;
            if let Some(r) = &collocated {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
                r.write_csv(create(&path.with_file_name(format!("{stem}-collocated{ext}")))?)?;
            }
        }
        None => {
            let mut out = io::stdout().lock();
            report.write_csv(&mut out)?;
            if let Some(r) = &collocated {
                writeln!(out)?;
                r.write_csv(&mut out)?;
            }
        }
    }
    Ok(())
}

fn cmd_probe(cfg: &RunConfig) -> Result<(), Failure> {
    let axis = match cfg.probe_axis.unwrap_or(Axis::X) {
        Axis::X => 0,
        Axis::Y => 1,
        Axis::Z => 2,
    };
    let sol = solve(cfg)?;
    let value = cfg.probe_value.unwrap_or(0.5);
    let samples = probe_line(&sol.cloud, &sol.flux, axis, value, 0.5 * sol.cloud.h)?;
    write_probe_csv(sol.cloud.dim, &samples, sink(cfg.output.as_deref())?)?;
    Ok(())
}

fn cmd_generate(cfg: &RunConfig) -> Result<(), Failure> {
    let problem = cfg.problem().map_err(Failure::Usage)?;
    let dx = cfg.spacing().map_err(Failure::Usage)?;
    let cloud = generate_cloud(&problem, dx, &cfg.options())?;
    cloud.write_csv(sink(cfg.output.as_deref())?)?;
    eprintln!("points {}", cloud.len());
    Ok(())
}
