//! `mrac` — experiment runner for the adaptive flight controller.
//!
//! Three subcommands cover the workflow:
//!
//! - `certify` checks a gain set: closed-loop eigenvalues, the Hurwitz
//!   verdict, and the Lyapunov certificate used by the adaptation law.
//! - `simulate` runs one batch of seeded trials with either controller and
//!   writes per-trial CSV telemetry plus a JSON summary.
//! - `compare` runs both arms on identical seeds and reports the per-axis
//!   RMS error reduction.
//!
//! Exit codes: 0 success, 1 invalid configuration or I/O failure,
//! 2 certification failure, 3 divergence during simulation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mrac_core::defaults;
use mrac_core::harness::{
    aggregate, paired_comparison, run_batch, BatchSpec, BatchSummary, ControllerMode, TrialContext,
    TrialOutcome, TrialResult,
};
use mrac_core::lyapunov::{assemble_ab, is_hurwitz, solve_lyapunov, HURWITZ_MARGIN};
use mrac_core::{Error, Result};

use mrac_cli::artifacts::{
    comparison_table, write_json, write_trial_csv, CertifyArtifact, CompareArtifact,
    SummaryArtifact,
};
use mrac_cli::config::{Experiment, RunConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_CERTIFICATION: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mrac",
    version,
    about = "Run adaptive-controller experiments described by a TOML config"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the configured gain set and write the eigenvalue report
    Certify(CertifyArgs),
    /// Run one batch of trials with the chosen controller
    Simulate(SimulateArgs),
    /// Run both controllers on identical seeds and compare RMS errors
    Compare(CompareArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment description (TOML)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override the configured output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the configured seed base
    #[arg(long, value_name = "N")]
    seed_base: Option<u64>,
    /// Run trials on K worker threads (default: serially)
    #[arg(long, value_name = "K")]
    parallel: Option<usize>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    batch: BatchArgs,
    /// Which control law closes the loop
    #[arg(long, value_enum)]
    controller: ControllerArg,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    batch: BatchArgs,
}

#[derive(Copy, Clone, ValueEnum)]
enum ControllerArg {
    /// Feedback plus the learned disturbance compensation
    Adaptive,
    /// Feedback only
    Baseline,
}

impl From<ControllerArg> for ControllerMode {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Adaptive => ControllerMode::Adaptive,
            ControllerArg::Baseline => ControllerMode::Baseline,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Certify(args) => cmd_certify(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Compare(args) => cmd_compare(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::NotHurwitz { .. } | Error::Numerical(_) => EXIT_CERTIFICATION,
                Error::Diverged { .. } => EXIT_DIVERGENCE,
                _ => EXIT_VALIDATION,
            })
        }
    }
}

/// Loads the config, applies command-line overrides, and builds the live
/// experiment objects.
fn load_experiment(common: &CommonArgs, seed_base: Option<u64>) -> Result<Experiment> {
    let cfg = RunConfig::load(&common.config)?;
    let mut exp = cfg.build()?;
    if let Some(out) = &common.out {
        exp.output_dir = out.clone();
    }
    if let Some(base) = seed_base {
        exp.seed_base = base;
    }
    Ok(exp)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_certify(args: &CertifyArgs) -> Result<ExitCode> {
    let exp = load_experiment(&args.common, None)?;
    let q = defaults::q_matrix();
    let residual_limit = mrac_core::lyapunov::RESIDUAL_TOLERANCE * q.norm();

    let matrices = assemble_ab(&exp.gains);
    let report = is_hurwitz(&matrices.a)?;

    ensure_dir(&exp.output_dir)?;
    let report_path = exp.output_dir.join("certify.json");

    if !report.hurwitz {
        let artifact = CertifyArtifact::new(&matrices, &report, None, residual_limit);
        write_json(&report_path, &artifact)?;
        let dom = report.dominant();
        if dom.norm() <= HURWITZ_MARGIN {
            eprintln!(
                "certification failed: the closed-loop matrix has a zero eigenvalue \
                 (an integral gain of zero leaves the integrator pole at the origin)"
            );
        } else {
            eprintln!(
                "certification failed: dominant eigenvalue {:.6} {:+.6}i has non-negative \
                 real part",
                dom.re, dom.im
            );
        }
        eprintln!("report: {}", report_path.display());
        return Ok(ExitCode::from(EXIT_CERTIFICATION));
    }

    let cert = solve_lyapunov(&matrices.a, &q)?;
    let artifact = CertifyArtifact::new(&matrices, &report, Some(&cert), residual_limit);
    write_json(&report_path, &artifact)?;

    println!(
        "gain set is Hurwitz; spectral abscissa {:.6}",
        report.abscissa
    );
    println!(
        "Lyapunov residual {:.3e} (limit {:.3e}), condition {:.3e}",
        cert.residual, residual_limit, cert.condition
    );
    println!("report: {}", report_path.display());

    if cert.residual <= residual_limit {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("certification failed: Lyapunov residual exceeds the limit");
        Ok(ExitCode::from(EXIT_CERTIFICATION))
    }
}

/// Runs one arm, writes its telemetry CSVs, and returns the results with
/// the file names they were written to.
fn run_arm(
    exp: &Experiment,
    ctx: &TrialContext,
    mode: ControllerMode,
    threads: Option<usize>,
) -> Result<(Vec<TrialResult>, Vec<String>)> {
    let batch = BatchSpec {
        mode,
        count: exp.count,
        duration: exp.duration,
        dt: exp.dt,
        seed_base: exp.seed_base,
        disturbance: exp.disturbance.clone(),
        reference: exp.reference.clone(),
        initial: exp.initial,
    };
    let results = run_batch(ctx, &batch, threads)?;
    let mut names = Vec::with_capacity(results.len());
    for r in &results {
        let name = format!("trial_{}_{}.csv", mode.label(), r.seed);
        write_trial_csv(&exp.output_dir.join(&name), &r.records)?;
        names.push(name);
    }
    Ok((results, names))
}

/// Aggregates one arm, tolerating the nothing-completed case so the summary
/// artifact can still record the failures.
fn try_aggregate(results: &[TrialResult]) -> Result<Option<BatchSummary>> {
    match aggregate(results) {
        Ok(s) => Ok(Some(s)),
        Err(Error::Empty(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn print_trial_lines(results: &[TrialResult]) {
    for r in results {
        match &r.outcome {
            TrialOutcome::Completed(m) => println!(
                "trial seed {:>3} [{}]: rms [{:.4e}, {:.4e}, {:.4e}] m, peak {:.4e} m",
                r.seed,
                r.mode.label(),
                m.rms.x,
                m.rms.y,
                m.rms.z,
                m.peak_error.amax(),
            ),
            TrialOutcome::Failed(f) => println!(
                "trial seed {:>3} [{}]: FAILED at t = {:.3} s: {}",
                r.seed,
                r.mode.label(),
                f.t,
                f.what
            ),
        }
    }
}

fn any_failed(results: &[TrialResult]) -> bool {
    results.iter().any(|r| r.failed())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let exp = load_experiment(&args.batch.common, args.batch.seed_base)?;
    let mode = ControllerMode::from(args.controller);
    let ctx = TrialContext::new(
        exp.gains,
        exp.plant,
        exp.network.clone(),
        &defaults::q_matrix(),
    )?;

    ensure_dir(&exp.output_dir)?;
    let (results, csv_names) = run_arm(&exp, &ctx, mode, args.batch.parallel)?;
    let summary = try_aggregate(&results)?;
    let artifact = SummaryArtifact::new(&results, &csv_names, summary.as_ref());
    let summary_path = exp
        .output_dir
        .join(format!("summary_{}.json", mode.label()));
    write_json(&summary_path, &artifact)?;

    print_trial_lines(&results);
    if let Some(s) = &summary {
        println!(
            "batch [{}]: {}/{} completed, mean rms [{:.4e}, {:.4e}, {:.4e}] m",
            mode.label(),
            s.n_completed,
            s.n_completed + s.n_failed,
            s.mean_rms.x,
            s.mean_rms.y,
            s.mean_rms.z,
        );
    } else {
        eprintln!("batch [{}]: no trial completed", mode.label());
    }
    println!("summary: {}", summary_path.display());

    if any_failed(&results) {
        Ok(ExitCode::from(EXIT_DIVERGENCE))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn cmd_compare(args: &CompareArgs) -> Result<ExitCode> {
    let exp = load_experiment(&args.batch.common, args.batch.seed_base)?;
    let ctx = TrialContext::new(
        exp.gains,
        exp.plant,
        exp.network.clone(),
        &defaults::q_matrix(),
    )?;

    ensure_dir(&exp.output_dir)?;
    let mut arms = Vec::new();
    for mode in [ControllerMode::Adaptive, ControllerMode::Baseline] {
        let (results, csv_names) = run_arm(&exp, &ctx, mode, args.batch.parallel)?;
        let summary = try_aggregate(&results)?;
        let artifact = SummaryArtifact::new(&results, &csv_names, summary.as_ref());
        write_json(
            &exp.output_dir
                .join(format!("summary_{}.json", mode.label())),
            &artifact,
        )?;
        print_trial_lines(&results);
        arms.push((results, summary));
    }
    let (baseline_results, baseline_summary) = arms.pop().expect("two arms");
    let (adaptive_results, adaptive_summary) = arms.pop().expect("two arms");

    let (Some(adaptive), Some(baseline)) = (adaptive_summary, baseline_summary) else {
        eprintln!("comparison not possible: an arm produced no completed trials");
        return Ok(ExitCode::from(EXIT_DIVERGENCE));
    };

    let report = paired_comparison(adaptive, baseline)?;
    let artifact = CompareArtifact::new(&report);
    let report_path = exp.output_dir.join("compare.json");
    write_json(&report_path, &artifact)?;

    let table = comparison_table(&report);
    let table_path = exp.output_dir.join("compare.txt");
    fs::write(&table_path, &table)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", table_path.display())))?;

    println!();
    print!("{table}");
    println!();
    println!("report: {}", report_path.display());

    if any_failed(&adaptive_results) || any_failed(&baseline_results) {
        Ok(ExitCode::from(EXIT_DIVERGENCE))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}
