//! Experiment harness: runs seeded trials of the closed loop, reduces each
//! trajectory to per-axis tracking metrics, and aggregates matched
//! adaptive/benchmark arms into a paired comparison.
//!
//! A trial that diverges mid-run is *flagged*, not propagated as an error:
//! the result carries the failure time and reason plus the telemetry
//! collected up to that point, and aggregation excludes it. Configuration
//! mistakes (bad step size, mismatched shapes) are still hard errors.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::controller::{ClosedLoopSystem, GainSet, StepRecord};
use crate::error::{Error, Result};
use crate::lyapunov::{assemble_ab, solve_lyapunov, LyapunovCert, Matrix9};
use crate::plant::{DisturbanceSource, PlantParams, SimState};
use crate::rbf::RbfNetwork;
use crate::reference::ReferenceSignal;
use crate::scenario::{sample_disturbance, DisturbanceSpec};

/// Relative slack when checking that the duration is a whole number of steps.
const STEP_COUNT_SLACK: f64 = 1e-9;

/// How the controller runs in a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerMode {
    /// Full loop: compensation force active, weights adapting.
    Adaptive,
    /// Benchmark: compensation forced to zero, weights frozen.
    Baseline,
}

impl ControllerMode {
    pub fn label(self) -> &'static str {
        match self {
            ControllerMode::Adaptive => "adaptive",
            ControllerMode::Baseline => "baseline",
        }
    }
}

/// Everything shared by the trials of a batch: the vehicle, the gains, the
/// kernel network, and the stability certificate (solved once, reused).
#[derive(Debug, Clone)]
pub struct TrialContext {
    pub gains: GainSet,
    pub plant: PlantParams,
    pub net: RbfNetwork,
    pub cert: LyapunovCert,
}

impl TrialContext {
    /// Certifies the gain set against `q` and packages the shared pieces.
    pub fn new(gains: GainSet, plant: PlantParams, net: RbfNetwork, q: &Matrix9) -> Result<Self> {
        let matrices = assemble_ab(&gains);
        let cert = solve_lyapunov(&matrices.a, q)?;
        Ok(Self {
            gains,
            plant,
            net,
            cert,
        })
    }
}

/// One fully materialized trial: the disturbance is already sampled.
#[derive(Debug, Clone)]
pub struct TrialSpec {
    pub mode: ControllerMode,
    /// Total simulated time, s; must be a whole number of steps.
    pub duration: f64,
    /// Step size, s.
    pub dt: f64,
    /// Bookkeeping seed this trial's disturbance was drawn with.
    pub seed: u64,
    pub disturbance: DisturbanceSource,
    pub reference: ReferenceSignal,
    pub initial: SimState,
}

impl TrialSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Config(format!(
                "trial duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.dt
            )));
        }
        self.step_count()?;
        self.disturbance.validate()?;
        self.reference.validate()?;
        self.initial.check_finite()?;
        Ok(())
    }

    /// Number of integration steps; errors unless `duration / dt` is a whole
    /// number (within rounding), so every record lands on the time grid.
    pub fn step_count(&self) -> Result<usize> {
        let ratio = self.duration / self.dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > STEP_COUNT_SLACK * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "duration {} is not a whole number of {}-second steps",
                self.duration, self.dt
            )));
        }
        Ok(steps as usize)
    }
}

/// Per-axis tracking metrics of one completed trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    /// Root-mean-square position error per axis over every record
    /// (initial sample included), m.
    pub rms: Vector3<f64>,
    /// Largest absolute position error per axis, m.
    pub peak_error: Vector3<f64>,
    /// Lyapunov function value at the final record.
    pub final_v: f64,
    /// Mean Frobenius norm of the weight velocity over the last tenth of
    /// the trial; a proxy for "the estimate has stopped moving".
    pub wdot_terminal: f64,
}

/// Why and when a trial was cut short.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    /// Simulated time at which divergence was detected, s.
    pub t: f64,
    pub what: String,
}

/// Terminal status of a trial.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Completed(TrialMetrics),
    Failed(TrialFailure),
}

/// One trial's outcome plus the full telemetry collected while it ran.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub seed: u64,
    pub mode: ControllerMode,
    pub outcome: TrialOutcome,
    /// Step records from `t0` onward; ends early when the trial failed.
    pub records: Vec<StepRecord>,
}

impl TrialResult {
    pub fn metrics(&self) -> Option<&TrialMetrics> {
        match &self.outcome {
            TrialOutcome::Completed(m) => Some(m),
            TrialOutcome::Failed(_) => None,
        }
    }

    pub fn failed(&self) -> bool {
        matches!(self.outcome, TrialOutcome::Failed(_))
    }
}

/// Per-axis root-mean-square of a sampled vector signal.
pub fn compute_rms(samples: &[Vector3<f64>]) -> Result<Vector3<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("error samples"));
    }
    let mut acc = Vector3::zeros();
    for s in samples {
        acc += s.component_mul(s);
    }
    Ok((acc / samples.len() as f64).map(f64::sqrt))
}

fn metrics_from_records(records: &[StepRecord], steps: usize) -> Result<TrialMetrics> {
    let rms = compute_rms(&records.iter().map(|r| r.r_e).collect::<Vec<_>>())?;
    let mut peak_error = Vector3::<f64>::zeros();
    for rec in records {
        for k in 0..3 {
            peak_error[k] = peak_error[k].max(rec.r_e[k].abs());
        }
    }
    let final_v = records.last().expect("records nonempty").v_lyap;
    // Last tenth of the trial, inclusive of both ends of the window.
    let tail_start = ((0.9 * steps as f64).ceil() as usize).min(records.len() - 1);
    let tail = &records[tail_start..];
    let wdot_terminal = tail.iter().map(|r| r.w_dot_fro).sum::<f64>() / tail.len() as f64;
    Ok(TrialMetrics {
        rms,
        peak_error,
        final_v,
        wdot_terminal,
    })
}

/// Runs one trial to completion or divergence.
///
/// Records are produced on the exact time grid `t0 + k dt` (the integrator's
/// accumulated time is realigned each step so long runs do not drift).
pub fn run_trial(ctx: &TrialContext, spec: &TrialSpec) -> Result<TrialResult> {
    spec.validate()?;
    let steps = spec.step_count()?;
    let sys = ClosedLoopSystem::new(
        ctx.gains,
        ctx.plant,
        ctx.net.clone(),
        ctx.cert.clone(),
        spec.reference.clone(),
        spec.disturbance.clone(),
        spec.mode == ControllerMode::Adaptive,
    )?;
    let mut state = sys.initial_state(&spec.initial)?;
    let t0 = spec.initial.t;

    let mut records = Vec::with_capacity(steps + 1);
    records.push(sys.observe(&state)?);
    let mut failure = None;
    for i in 0..steps {
        match sys.step(&state, spec.dt) {
            Ok(mut next) => {
                next.t = t0 + (i + 1) as f64 * spec.dt;
                records.push(sys.observe(&next)?);
                state = next;
            }
            Err(Error::Diverged { t, what }) => {
                failure = Some(TrialFailure { t, what });
                break;
            }
            Err(other) => return Err(other),
        }
    }

    let outcome = match failure {
        Some(f) => TrialOutcome::Failed(f),
        None => TrialOutcome::Completed(metrics_from_records(&records, steps)?),
    };
    Ok(TrialResult {
        seed: spec.seed,
        mode: spec.mode,
        outcome,
        records,
    })
}

/// Aggregate statistics of one arm (one controller mode) of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub mode: ControllerMode,
    /// Per-axis mean of the completed trials' RMS errors, m.
    pub mean_rms: Vector3<f64>,
    /// Per-axis sample standard deviation (N-1 denominator) of the RMS
    /// errors; `None` with fewer than two completed trials.
    pub esd_rms: Option<Vector3<f64>>,
    pub n_completed: usize,
    pub n_failed: usize,
}

/// Reduces one arm's results to mean/spread statistics.
///
/// Failed trials are counted and excluded; an all-failed arm is an error
/// because there is nothing left to summarize.
pub fn aggregate(results: &[TrialResult]) -> Result<BatchSummary> {
    let first = results.first().ok_or(Error::Empty("trial results"))?;
    let mode = first.mode;
    if results.iter().any(|r| r.mode != mode) {
        return Err(Error::Config(
            "cannot aggregate trials from different controller modes".into(),
        ));
    }
    let completed: Vec<&TrialMetrics> = results.iter().filter_map(|r| r.metrics()).collect();
    let n_failed = results.len() - completed.len();
    if completed.is_empty() {
        return Err(Error::Empty("completed trials"));
    }
    let n = completed.len() as f64;
    let mean_rms = completed
        .iter()
        .fold(Vector3::zeros(), |acc, m| acc + m.rms)
        / n;
    let esd_rms = (completed.len() >= 2).then(|| {
        let ss = completed.iter().fold(Vector3::zeros(), |acc, m| {
            let d = m.rms - mean_rms;
            acc + d.component_mul(&d)
        });
        (ss / (n - 1.0)).map(f64::sqrt)
    });
    Ok(BatchSummary {
        mode,
        mean_rms,
        esd_rms,
        n_completed: completed.len(),
        n_failed,
    })
}

/// Side-by-side summary of a seed-matched adaptive/benchmark pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedReport {
    pub adaptive: BatchSummary,
    pub baseline: BatchSummary,
    /// Percent reduction of the adaptive mean RMS relative to the benchmark,
    /// per axis: `100 (b - a) / b`. `None` where the benchmark mean is zero
    /// (no error to reduce); negative values are reported as-is.
    pub reduction_pct: [Option<f64>; 3],
}

/// Combines the two arms of a paired experiment into one report.
pub fn paired_comparison(adaptive: BatchSummary, baseline: BatchSummary) -> Result<PairedReport> {
    if adaptive.mode != ControllerMode::Adaptive || baseline.mode != ControllerMode::Baseline {
        return Err(Error::Config(format!(
            "paired comparison needs an adaptive and a baseline arm, got {} and {}",
            adaptive.mode.label(),
            baseline.mode.label()
        )));
    }
    let mut reduction_pct = [None; 3];
    for k in 0..3 {
        let b = baseline.mean_rms[k];
        if b != 0.0 {
            reduction_pct[k] = Some(100.0 * (b - adaptive.mean_rms[k]) / b);
        }
    }
    Ok(PairedReport {
        adaptive,
        baseline,
        reduction_pct,
    })
}

/// One arm of an experiment: `count` seeded trials sharing everything but
/// the disturbance draw.
#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub mode: ControllerMode,
    pub count: usize,
    pub duration: f64,
    pub dt: f64,
    /// Trial `k` uses seed `seed_base + k`.
    pub seed_base: u64,
    pub disturbance: DisturbanceSpec,
    pub reference: ReferenceSignal,
    pub initial: SimState,
}

impl BatchSpec {
    /// Materializes the per-trial specs, sampling one disturbance per seed.
    /// The tether anchor (when the scenario draws one) is placed relative to
    /// the reference position at the start time.
    pub fn trial_specs(&self, plant: &PlantParams) -> Result<Vec<TrialSpec>> {
        if self.count == 0 {
            return Err(Error::Config("batch needs at least one trial".into()));
        }
        let hover = self.reference.sample(self.initial.t).r_d;
        let hover_force = plant.hover_force();
        (0..self.count)
            .map(|k| {
                let seed = self.seed_base.checked_add(k as u64).ok_or_else(|| {
                    Error::Config(format!("seed {} + {k} overflows", self.seed_base))
                })?;
                let disturbance = sample_disturbance(&self.disturbance, seed, &hover, hover_force)?;
                let spec = TrialSpec {
                    mode: self.mode,
                    duration: self.duration,
                    dt: self.dt,
                    seed,
                    disturbance,
                    reference: self.reference.clone(),
                    initial: self.initial,
                };
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }
}

/// Runs one arm, sequentially or on a bounded worker pool.
///
/// Results come back in seed order either way, and a given batch is
/// bit-identical across runs and thread counts: each trial is a pure
/// function of its spec.
pub fn run_batch(
    ctx: &TrialContext,
    batch: &BatchSpec,
    threads: Option<usize>,
) -> Result<Vec<TrialResult>> {
    let specs = batch.trial_specs(&ctx.plant)?;
    match threads {
        None | Some(1) => specs.iter().map(|s| run_trial(ctx, s)).collect(),
        Some(0) => Err(Error::Config("worker count must be at least 1".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("failed to build worker pool: {e}")))?;
            pool.install(|| specs.par_iter().map(|s| run_trial(ctx, s)).collect())
        }
    }
}
