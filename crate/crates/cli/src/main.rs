//! `fracvi`: solves, spectral reference runs and convergence studies for the
//! parabolic fractional obstacle problem.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracvi_core::fracparams::FracParams;
use fracvi_core::oracle::{spectral_vi_solve, OracleConfig};
use fracvi_core::study::{
    data_functional, emit_report, run_interp_study, run_space_rate_study, run_time_rate_study, run_truncation_study,
    DataFunctional, Preset, RateReport, ReportFormat, Rung,
};
use fracvi_core::timestepper::{
    energy_diagnostics, error_cal_e_exact, run, Discretization, EnergyReport, ForcingMode,
};
use serde::Serialize;

use config::Config;

#[derive(Parser)]
#[command(name = "fracvi", version, about = "Parabolic fractional obstacle problems via the extension method")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// One run on the mesh given by the top-level keys.
    Solve(Args),
    /// Errors across a ladder of time steps on a fixed mesh.
    TimeRates(Args),
    /// Errors across a ladder coupling the mesh and the time step.
    SpaceRates(Args),
    /// Errors across a ladder of cylinder heights.
    Truncation(Args),
    /// The spectral reference solver on its own.
    Oracle(Args),
    /// Interpolation error of a closed-form α-harmonic function.
    InterpStudy(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output` from the config, then `fracvi-out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for ladder rungs (0: one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Comma separated list of csv, json, svg.
    #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
    format: Vec<ReportFormat>,
}

#[derive(Serialize)]
struct SolveSummary {
    preset: Preset,
    s: f64,
    #[serde(rename = "T")]
    t_final: f64,
    mode: ForcingMode,
    rung: Rung,
    gamma: f64,
    n_cells: usize,
    tau: f64,
    steps: usize,
    max_comp_residual: f64,
    min_gap: f64,
    pdas_iterations: Vec<usize>,
    final_active_size: usize,
    energy: EnergyReport,
    data_functional: DataFunctional,
    /// `(L∞(L²), L²(H^s))` errors against the closed form, when one exists.
    closed_form_errors: Option<(f64, f64)>,
    pass: bool,
}

#[derive(Serialize)]
struct OracleSummary {
    preset: Preset,
    s: f64,
    #[serde(rename = "T")]
    t_final: f64,
    config: OracleConfig,
    steps: usize,
    max_residual: f64,
    max_sweeps: usize,
    min_gap: f64,
    /// Whether `½‖u^k‖²_{H^s}` never increases; only checked without forcing.
    energy_nonincreasing: Option<bool>,
    pass: bool,
}

const RESIDUAL_LIMIT: f64 = 1e-8;
const GAP_LIMIT: f64 = -1e-10;

fn out_dir(args: &Args, config: &Config) -> PathBuf {
    args.out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("fracvi-out"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

fn solve(args: &Args, config: &Config) -> Result<bool, String> {
    let rung = config.single_rung()?;
    let problem = config.preset.problem(config.s, config.t_final());
    problem.validate().map_err(|e| e.to_string())?;
    let params = FracParams::new(config.s).map_err(|e| e.to_string())?;
    let mesh = rung.mesh(&params, 1.0, config.tail_per_unit).map_err(|e| e.to_string())?;
    let traj = run(
        &problem,
        &Discretization {
            mesh,
            steps: rung.k,
            mode: config.mode(),
        },
    )
    .map_err(|e| e.to_string())?;
    let closed_form_errors = match config.preset.exact(config.s) {
        Some(u) => Some(error_cal_e_exact(&traj, u).map_err(|e| e.to_string())?),
        None => None,
    };
    let max_comp_residual = traj.max_residual();
    let min_gap = traj.min_gap();
    let summary = SolveSummary {
        preset: config.preset,
        s: config.s,
        t_final: config.t_final(),
        mode: config.mode(),
        gamma: rung.gamma(&params),
        rung,
        n_cells: traj.mesh.n_cells(),
        tau: traj.tau,
        steps: traj.steps(),
        max_comp_residual,
        min_gap,
        pdas_iterations: traj.iterations.clone(),
        final_active_size: traj.active_sets.last().map_or(0, Vec::len),
        energy: energy_diagnostics(&traj),
        data_functional: data_functional(&problem).map_err(|e| e.to_string())?,
        closed_form_errors,
        pass: max_comp_residual <= RESIDUAL_LIMIT && min_gap >= GAP_LIMIT,
    };
    let dir = out_dir(args, config);
    fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for f in &args.format {
        match f {
            ReportFormat::Csv => {
                let path = dir.join("solve.csv");
                let file = fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                traj.write_csv(std::io::BufWriter::new(file)).map_err(|e| e.to_string())?;
                println!("wrote {}", path.display());
            }
            ReportFormat::Json => {
                let path = dir.join("solve.json");
                write_json(&path, &summary)?;
                println!("wrote {}", path.display());
            }
            ReportFormat::Svg => {}
        }
    }
    println!(
        "solve: {} steps, max residual {:.2e}, min gap {:.2e}: {}",
        summary.steps,
        max_comp_residual,
        min_gap,
        verdict(summary.pass)
    );
    Ok(summary.pass)
}

fn oracle(args: &Args, config: &Config) -> Result<bool, String> {
    let problem = config.preset.problem(config.s, config.t_final());
    problem.validate().map_err(|e| e.to_string())?;
    let oc = config.oracle_config();
    let sol = spectral_vi_solve(&problem, &oc).map_err(|e| e.to_string())?;
    let max_residual = sol.residuals.iter().copied().fold(0.0, f64::max);
    let energy_nonincreasing = problem
        .forcing
        .is_none()
        .then(|| sol.energies.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    let pass = max_residual <= RESIDUAL_LIMIT && sol.min_gap >= GAP_LIMIT && energy_nonincreasing != Some(false);
    let summary = OracleSummary {
        preset: config.preset,
        s: config.s,
        t_final: config.t_final(),
        config: oc,
        steps: sol.residuals.len(),
        max_residual,
        max_sweeps: sol.sweeps.iter().copied().max().unwrap_or(0),
        min_gap: sol.min_gap,
        energy_nonincreasing,
        pass,
    };
    let dir = out_dir(args, config);
    fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for f in &args.format {
        match f {
            ReportFormat::Csv => {
                let path = dir.join("oracle.csv");
                let file = fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                sol.trajectory
                    .write_csv(std::io::BufWriter::new(file))
                    .map_err(|e| e.to_string())?;
                println!("wrote {}", path.display());
            }
            ReportFormat::Json => {
                let path = dir.join("oracle.json");
                write_json(&path, &summary)?;
                println!("wrote {}", path.display());
            }
            ReportFormat::Svg => {}
        }
    }
    println!(
        "oracle: {} steps, max residual {:.2e}, min gap {:.2e}: {}",
        summary.steps,
        max_residual,
        sol.min_gap,
        verdict(pass)
    );
    Ok(pass)
}

fn study(args: &Args, config: &Config, verb: &str) -> Result<bool, String> {
    let spec = config.study_spec()?;
    let report: RateReport = match verb {
        "time-rates" => run_time_rate_study(&spec, args.jobs),
        "space-rates" => run_space_rate_study(&spec, args.jobs),
        "truncation" => run_truncation_study(&spec, args.jobs),
        "interp-study" => run_interp_study(&spec, args.jobs),
        other => unreachable!("not a study verb: {other}"),
    }
    .map_err(|e| e.to_string())?;
    let dir = out_dir(args, config);
    for p in emit_report(&report, &dir, verb, &args.format).map_err(|e| e.to_string())? {
        println!("wrote {}", p.display());
    }
    let band = |b: Option<f64>| b.map_or("-".to_string(), |v| format!("{v:.3}"));
    println!(
        "{verb}: slope {:.4} against {} (expected {:.3}, band [{}, {}]), correlation {:.4}, monotone {}: {}",
        report.slope,
        report.resolution,
        report.expected_slope,
        band(report.band[0]),
        band(report.band[1]),
        report.correlation,
        report.monotone,
        verdict(report.pass)
    );
    Ok(report.pass)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (verb, args) = match &cli.verb {
        Verb::Solve(a) => ("solve", a),
        Verb::TimeRates(a) => ("time-rates", a),
        Verb::SpaceRates(a) => ("space-rates", a),
        Verb::Truncation(a) => ("truncation", a),
        Verb::Oracle(a) => ("oracle", a),
        Verb::InterpStudy(a) => ("interp-study", a),
    };
    let result = Config::load(&args.config).and_then(|config| match verb {
        "solve" => solve(args, &config),
        "oracle" => oracle(args, &config),
        _ => study(args, &config, verb),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
