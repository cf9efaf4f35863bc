//! `rmss`: risk-managed steady-state analysis from the command line.
//!
//! Exit codes: 0 success, 2 solver failure, 3 configuration error.

mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use rmss_core::montecarlo::{
    mae_compare, run_monte_carlo, CiMethod, ComparisonReport, McError, McOptions, McReport,
};
use rmss_core::powerflow::{PowerFlowModel, SolveOptions};
use rmss_core::sensitivity::{hybrid_with_model, HybridOptions};
use rmss_core::worstcase::{
    apply_setpoint_band, run_rmss, Limits, RmssOptions, RmssReport, SigmaC, SigmaScale, SweepGrid,
};

use config::{parse_fraction, CaseArgs};
use error::CliError;
use output::{ensure_dir, write_atomic, write_json, write_manifest};

#[derive(Debug, Parser)]
#[command(
    name = "rmss",
    version,
    about = "Risk-managed steady-state analysis of power grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Worst-case bounds, corners and violation counts over a σ_c sweep.
    Run(RunArgs),
    /// Seeded Monte Carlo power flow reference.
    Mc(McArgs),
    /// MAE and speedup of an RMSS report against a Monte Carlo report.
    Compare(CompareArgs),
    /// Sensitivity matrix as CSV.
    Sens(SensArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct RunArgs {
    #[command(flatten)]
    #[serde(flatten)]
    case: CaseArgs,
    /// Per-side confidence of the worst-case bounds.
    #[arg(long, default_value_t = 0.975)]
    rho: f64,
    /// Metric spread: `propagated`, `1%` of each nominal value, or a value in pu.
    #[arg(long = "sigma-c", conflicts_with = "sweep")]
    sigma_c: Option<String>,
    /// Logarithmic σ_c sweep `lo:hi:count` (default 0.1%:5%:20).
    #[arg(long)]
    sweep: Option<String>,
    /// Replace case limits by setpoint·(1 ± band), e.g. `2%`.
    #[arg(long)]
    band: Option<String>,
    /// Re-solve the power flow at every worst-case parameter vector.
    #[arg(long)]
    resimulate: bool,
    /// Seed of the statistical sensitivity fallback.
    #[arg(long, env = "RMSS_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CiArg {
    /// 2.5%/97.5% empirical percentiles.
    Percentile,
    /// 95% confidence interval of the mean.
    MeanCi,
}

#[derive(Debug, Clone, Args, Serialize)]
struct McArgs {
    #[command(flatten)]
    #[serde(flatten)]
    case: CaseArgs,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, env = "RMSS_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value = "percentile")]
    ci: CiArg,
    /// Also write every converged sample's metrics to mc_samples.csv.
    #[arg(long)]
    keep_samples: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
struct CompareArgs {
    /// rmss_report.json from `rmss run`.
    #[arg(long)]
    rmss: PathBuf,
    /// mc_report.json from `rmss mc`.
    #[arg(long)]
    mc: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SensArgs {
    #[command(flatten)]
    #[serde(flatten)]
    case: CaseArgs,
    #[arg(long, env = "RMSS_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory for sensitivity.csv; printed to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(3);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Mc(a) => cmd_mc(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sens(a) => cmd_sens(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rmss: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn sigma_c(args: &RunArgs) -> Result<SigmaC, CliError> {
    if let Some(sweep) = &args.sweep {
        let grid: SweepGrid = sweep
            .parse()
            .map_err(|e| CliError::config(format!("--sweep: {e}")))?;
        return Ok(SigmaC::Sweep(grid));
    }
    let Some(text) = &args.sigma_c else {
        return Ok(SigmaC::default());
    };
    if text.trim().eq_ignore_ascii_case("propagated") {
        return Ok(SigmaC::Propagated);
    }
    let scale = if text.trim().ends_with('%') {
        SigmaScale::Relative
    } else {
        SigmaScale::Absolute
    };
    let value = parse_fraction("--sigma-c", text)?;
    Ok(SigmaC::Known { value, scale })
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let problem = args.case.load()?;
    let limits = match &args.band {
        Some(b) => Limits::SetpointBand(parse_fraction("--band", b)?),
        None => Limits::Case,
    };
    let opts = RmssOptions {
        rho: args.rho,
        sigma_c: sigma_c(args)?,
        limits,
        hybrid: HybridOptions {
            seed: args.seed,
            ..HybridOptions::default()
        },
        solve: SolveOptions::default(),
        resimulate: args.resimulate,
    };
    let report = run_rmss(&problem.case, &problem.params, &problem.spec, &opts)?;
    let limit_case = match limits {
        Limits::Case => problem.case.clone(),
        Limits::SetpointBand(band) => apply_setpoint_band(&problem.case, band),
    };

    ensure_dir(&args.out)?;
    let outputs = vec![
        write_json(&args.out, "rmss_report.json", &report)?,
        write_atomic(
            &args.out,
            "violations.csv",
            report.violations_csv().as_bytes(),
        )?,
        write_atomic(
            &args.out,
            "worst_violator.csv",
            report.worst_violator_csv(&limit_case).as_bytes(),
        )?,
    ];
    #[derive(Serialize)]
    struct Echo<'a> {
        flags: &'a RunArgs,
        options: &'a RmssOptions,
    }
    let echo = Echo {
        flags: args,
        options: &opts,
    };
    write_manifest(&args.out, "run", Some(args.seed), &echo, &outputs)?;

    println!(
        "{}: {} metrics, {} parameters, {} sweep points, {:.3} ms",
        report.case,
        report.metrics.len(),
        report.parameters.len(),
        report.sweep.len(),
        1e3 * report.timing.total_seconds
    );
    for p in &report.sweep {
        let sigma = p
            .sigma_c
            .map_or_else(|| "propagated".into(), |v| format!("{v:.6}"));
        println!(
            "  sigma_c {sigma:>12}  violations {:>5}",
            p.violations.total()
        );
    }
    if let Some(bus) = report.worst_violator {
        println!("worst violator: bus {bus}");
    }
    Ok(())
}

fn cmd_mc(args: &McArgs) -> Result<(), CliError> {
    if args.samples == 0 {
        return Err(CliError::config("--samples must be at least 1"));
    }
    if args.workers == 0 {
        return Err(CliError::config("--workers must be at least 1"));
    }
    let problem = args.case.load()?;
    let opts = McOptions {
        samples: args.samples,
        seed: args.seed,
        workers: args.workers,
        ci: match args.ci {
            CiArg::Percentile => CiMethod::Percentile,
            CiArg::MeanCi => CiMethod::MeanCi,
        },
        solve: SolveOptions::default(),
        keep_samples: args.keep_samples,
    };
    let report = run_monte_carlo(&problem.case, &problem.params, &problem.spec, &opts)?;

    ensure_dir(&args.out)?;
    let mut outputs = vec![
        write_json(&args.out, "mc_report.json", &report)?,
        write_json(&args.out, "mc_statistics.json", &report.statistics)?,
    ];
    if args.keep_samples {
        outputs.push(write_atomic(
            &args.out,
            "mc_samples.csv",
            report.samples_csv().as_bytes(),
        )?);
    }
    write_manifest(&args.out, "mc", Some(args.seed), args, &outputs)?;

    let s = &report.statistics;
    println!(
        "{}: {} samples, {} converged, {} failed, {:.3} s on {} worker(s)",
        s.case,
        s.samples,
        s.converged,
        s.failed,
        report.timing.total_seconds,
        report.timing.workers
    );
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let rmss: RmssReport = read_json(&args.rmss)?;
    let mc: McReport = read_json(&args.mc)?;
    let cmp = mae_compare(&rmss, &mc).map_err(|e| match e {
        McError::DimensionMismatch { .. } | McError::EmptyReport => CliError::config(e.to_string()),
        e => e.into(),
    })?;
    ensure_dir(&args.out)?;
    let outputs = vec![write_json(&args.out, "comparison.json", &cmp)?];
    write_manifest(
        &args.out,
        "compare",
        Some(mc.statistics.seed),
        args,
        &outputs,
    )?;
    print!("{}", comparison_table(&cmp));
    Ok(())
}

fn comparison_table(c: &ComparisonReport) -> String {
    let sigma = c
        .sigma_c
        .map_or_else(|| "propagated".into(), |v| format!("{v}"));
    let mut out = format!(
        "{} (sweep point {}, sigma_c {sigma})\n",
        c.case, c.sweep_index
    );
    out.push_str(&format!("{:<14}{:>12}{:>8}\n", "bound", "MAE %", "n"));
    for (name, m) in [
        ("c_ub", c.c_ub),
        ("c_lb", c.c_lb),
        ("E_ub", c.e_ub),
        ("E_lb", c.e_lb),
        ("E_ub corners", c.e_ub_corners),
        ("E_lb corners", c.e_lb_corners),
    ] {
        out.push_str(&format!("{name:<14}{:>12.4}{:>8}\n", m.percent, m.count));
    }
    out.push_str(&format!(
        "speedup {:.1}x (Monte Carlo {:.4} s, RMSS {:.6} s)\n",
        c.speedup, c.mc_seconds, c.rmss_seconds
    ));
    out
}

fn cmd_sens(args: &SensArgs) -> Result<(), CliError> {
    let problem = args.case.load()?;
    let model = PowerFlowModel::new(&problem.case)?;
    let sol = model.solve(&SolveOptions::default())?;
    let opts = HybridOptions {
        seed: args.seed,
        ..HybridOptions::default()
    };
    let (matrix, _) = hybrid_with_model(
        &model,
        model.base_injection(),
        &sol,
        &problem.params,
        &problem.spec,
        &opts,
    )?;
    let csv = matrix.to_csv();
    match &args.out {
        Some(dir) => {
            ensure_dir(dir)?;
            let outputs = vec![write_atomic(dir, "sensitivity.csv", csv.as_bytes())?];
            write_manifest(dir, "sens", Some(args.seed), args, &outputs)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}
