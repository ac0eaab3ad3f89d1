//! Artifact writers: per-trial CSV telemetry, JSON reports, and the
//! human-readable comparison table.
//!
//! Files use SI units (meters, newtons, seconds); only the printed
//! comparison table converts to centimeters for reading. Every JSON report
//! carries a `generated_at_unix` stamp on its own line so consumers that
//! diff artifacts can strip it.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{Dim, Matrix, RawStorage, Vector3};
use serde::Serialize;

use mrac_core::controller::StepRecord;
use mrac_core::harness::{BatchSummary, PairedReport, TrialOutcome, TrialResult};
use mrac_core::lyapunov::{HurwitzReport, LyapunovCert, SystemMatrices};
use mrac_core::{Error, Result};

/// Column order of the per-trial telemetry CSV.
pub const CSV_HEADER: [&str; 19] = [
    "t", "rx", "ry", "rz", "rdx", "rdy", "rdz", "rex", "rey", "rez", "fx", "fy", "fz", "fax",
    "fay", "faz", "v", "vdot", "wfro",
];

fn io_err(what: &str, path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("cannot {what} {}: {e}", path.display()))
}

/// Shortest decimal representation that parses back to the same float.
fn num(x: f64) -> String {
    format!("{x}")
}

fn triple(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn matrix_rows<R, C, S>(m: &Matrix<f64, R, C, S>) -> Vec<Vec<f64>>
where
    R: Dim,
    C: Dim,
    S: RawStorage<f64, R, C>,
{
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes one trial's telemetry as CSV, one row per integrator step.
pub fn write_trial_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err("create", path, e))?;
    w.write_record(CSV_HEADER)
        .map_err(|e| io_err("write", path, e))?;
    for rec in records {
        let row = [
            num(rec.t),
            num(rec.r.x),
            num(rec.r.y),
            num(rec.r.z),
            num(rec.r_d.x),
            num(rec.r_d.y),
            num(rec.r_d.z),
            num(rec.r_e.x),
            num(rec.r_e.y),
            num(rec.r_e.z),
            num(rec.f.x),
            num(rec.f.y),
            num(rec.f.z),
            num(rec.f_a.x),
            num(rec.f_a.y),
            num(rec.f_a.z),
            num(rec.v_lyap),
            num(rec.v_rate),
            num(rec.w_fro),
        ];
        w.write_record(&row).map_err(|e| io_err("write", path, e))?;
    }
    w.flush().map_err(|e| io_err("flush", path, e))
}

/// Serializes a report as pretty-printed JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("cannot serialize report: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| io_err("write", path, e))
}

#[derive(Debug, Serialize)]
pub struct EigenvalueEntry {
    pub re: f64,
    pub im: f64,
}

/// Full record of a gain-certification run. The Lyapunov fields are `null`
/// when the eigenvalue check already failed and the equation was never
/// solved.
#[derive(Debug, Serialize)]
pub struct CertifyArtifact {
    /// Whether every closed-loop eigenvalue has negative real part.
    pub hurwitz: bool,
    /// Largest eigenvalue real part.
    pub spectral_abscissa: f64,
    /// All nine eigenvalues, sorted by descending real part.
    pub eigenvalues: Vec<EigenvalueEntry>,
    /// Frobenius norm of `AᵀP + PA + Q` for the solved `P`.
    pub residual: Option<f64>,
    /// Largest residual accepted for this `Q`.
    pub residual_limit: f64,
    /// Smallest eigenvalue of `Q`.
    pub lambda_min_q: Option<f64>,
    /// Infinity-norm condition estimate of the solve.
    pub condition: Option<f64>,
    pub ill_conditioned: Option<bool>,
    /// Error-system matrix `A`, 9×9, row-major.
    pub a: Vec<Vec<f64>>,
    /// Input matrix `B`, 9×3, row-major.
    pub b: Vec<Vec<f64>>,
    /// Lyapunov solution `P`, 9×9, row-major.
    pub p: Option<Vec<Vec<f64>>>,
    pub generated_at_unix: u64,
}

impl CertifyArtifact {
    pub fn new(
        matrices: &SystemMatrices,
        report: &HurwitzReport,
        cert: Option<&LyapunovCert>,
        residual_limit: f64,
    ) -> Self {
        Self {
            hurwitz: report.hurwitz,
            spectral_abscissa: report.abscissa,
            eigenvalues: report
                .eigenvalues
                .iter()
                .map(|e| EigenvalueEntry { re: e.re, im: e.im })
                .collect(),
            residual: cert.map(|c| c.residual),
            residual_limit,
            lambda_min_q: cert.map(|c| c.lambda_min_q),
            condition: cert.map(|c| c.condition),
            ill_conditioned: cert.map(|c| c.ill_conditioned),
            a: matrix_rows(&matrices.a),
            b: matrix_rows(&matrices.b),
            p: cert.map(|c| matrix_rows(&c.p)),
            generated_at_unix: unix_now(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct MetricsEntry {
    /// Per-axis RMS position error, m.
    pub rms: [f64; 3],
    /// Per-axis peak position error, m.
    pub peak_error: [f64; 3],
    pub final_v: f64,
    pub wdot_terminal: f64,
}

#[derive(Debug, Serialize)]
pub struct FailureEntry {
    /// Simulated time at which the trial diverged, s.
    pub t: f64,
    pub what: String,
}

#[derive(Debug, Serialize)]
pub struct TrialEntry {
    pub seed: u64,
    /// Telemetry file, relative to the summary's directory.
    pub csv: String,
    pub outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureEntry>,
}

/// One arm's batch: per-trial outcomes plus aggregate statistics. The
/// aggregate fields are `null` when no trial completed.
#[derive(Debug, Serialize)]
pub struct SummaryArtifact {
    pub mode: &'static str,
    pub n_completed: usize,
    pub n_failed: usize,
    /// Per-axis mean of completed trials' RMS errors, m.
    pub mean_rms: Option<[f64; 3]>,
    /// Per-axis sample standard deviation of the RMS errors; `null` with
    /// fewer than two completed trials.
    pub esd_rms: Option<[f64; 3]>,
    pub trials: Vec<TrialEntry>,
    pub generated_at_unix: u64,
}

impl SummaryArtifact {
    /// `csv_names[k]` is the telemetry file written for `results[k]`.
    pub fn new(
        results: &[TrialResult],
        csv_names: &[String],
        summary: Option<&BatchSummary>,
    ) -> Self {
        let trials = results
            .iter()
            .zip(csv_names)
            .map(|(r, csv)| {
                let (outcome, metrics, failure) = match &r.outcome {
                    TrialOutcome::Completed(m) => (
                        "completed",
                        Some(MetricsEntry {
                            rms: triple(&m.rms),
                            peak_error: triple(&m.peak_error),
                            final_v: m.final_v,
                            wdot_terminal: m.wdot_terminal,
                        }),
                        None,
                    ),
                    TrialOutcome::Failed(f) => (
                        "failed",
                        None,
                        Some(FailureEntry {
                            t: f.t,
                            what: f.what.clone(),
                        }),
                    ),
                };
                TrialEntry {
                    seed: r.seed,
                    csv: csv.clone(),
                    outcome,
                    metrics,
                    failure,
                }
            })
            .collect();
        let (n_completed, n_failed) =
            results.iter().fold(
                (0, 0),
                |(c, f), r| {
                    if r.failed() {
                        (c, f + 1)
                    } else {
                        (c + 1, f)
                    }
                },
            );
        Self {
            mode: results.first().map_or("unknown", |r| r.mode.label()),
            n_completed,
            n_failed,
            mean_rms: summary.map(|s| triple(&s.mean_rms)),
            esd_rms: summary.and_then(|s| s.esd_rms.as_ref().map(triple)),
            trials,
            generated_at_unix: unix_now(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ArmEntry {
    pub mode: &'static str,
    pub n_completed: usize,
    pub n_failed: usize,
    pub mean_rms: [f64; 3],
    pub esd_rms: Option<[f64; 3]>,
}

impl ArmEntry {
    fn new(mode: &'static str, s: &BatchSummary) -> Self {
        Self {
            mode,
            n_completed: s.n_completed,
            n_failed: s.n_failed,
            mean_rms: triple(&s.mean_rms),
            esd_rms: s.esd_rms.as_ref().map(triple),
        }
    }
}

/// The paired comparison: both arms' statistics and the per-axis percent
/// reduction of mean RMS error, `null` where the benchmark error is zero.
#[derive(Debug, Serialize)]
pub struct CompareArtifact {
    pub adaptive: ArmEntry,
    pub baseline: ArmEntry,
    pub reduction_pct: [Option<f64>; 3],
    pub generated_at_unix: u64,
}

impl CompareArtifact {
    pub fn new(report: &PairedReport) -> Self {
        Self {
            adaptive: ArmEntry::new("adaptive", &report.adaptive),
            baseline: ArmEntry::new("baseline", &report.baseline),
            reduction_pct: report.reduction_pct,
            generated_at_unix: unix_now(),
        }
    }
}

fn mean_esd_cm(mean_m: f64, esd_m: Option<f64>) -> String {
    match esd_m {
        Some(e) => format!("{:.4} ± {:.4}", mean_m * 100.0, e * 100.0),
        None => format!("{:.4} ±      -", mean_m * 100.0),
    }
}

/// Renders the paired comparison as a fixed-width table in centimeters.
pub fn comparison_table(report: &PairedReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<6} {:>22} {:>22} {:>11}\n",
        "axis", "baseline rms [cm]", "adaptive rms [cm]", "reduction"
    ));
    for (k, axis) in ["x", "y", "z"].iter().enumerate() {
        let b = mean_esd_cm(
            report.baseline.mean_rms[k],
            report.baseline.esd_rms.as_ref().map(|e| e[k]),
        );
        let a = mean_esd_cm(
            report.adaptive.mean_rms[k],
            report.adaptive.esd_rms.as_ref().map(|e| e[k]),
        );
        let red = match report.reduction_pct[k] {
            Some(pct) => format!("{pct:.1}%"),
            None => "n/a".to_string(),
        };
        out.push_str(&format!("{axis:<6} {b:>22} {a:>22} {red:>11}\n"));
    }
    out.push_str(&format!(
        "{:<6} {:>22} {:>22}\n",
        "trials",
        format!(
            "{}/{}",
            report.baseline.n_completed,
            report.baseline.n_completed + report.baseline.n_failed
        ),
        format!(
            "{}/{}",
            report.adaptive.n_completed,
            report.adaptive.n_completed + report.adaptive.n_failed
        ),
    ));
    out
}
