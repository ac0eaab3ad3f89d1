//! On-disk experiment description.
//!
//! One TOML file describes a complete run: plant parameters, controller
//! gains, the feature network, the reference trajectory, the disturbance,
//! and the trial protocol. Parsing is strict — unknown keys are rejected —
//! and the schema round-trips: parse → serialize → parse is the identity.
//!
//! [`RunConfig::build`] turns the description into live simulation objects.
//! Every semantic check is funneled through the library constructors, so a
//! bad config file produces the same validation error the API would.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use mrac_core::controller::GainSet;
use mrac_core::plant::{DisturbanceSource, PlantParams, SimState};
use mrac_core::rbf::{build_grid_network, RbfNetwork, WeightMatrix, STATE_DIM};
use mrac_core::reference::{ReferenceSignal, Waypoint};
use mrac_core::scenario::{Band, CompositeScenario, DisturbanceSpec};
use mrac_core::{Error, Result};

/// Top-level experiment description, one per TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSection,
    pub gains: GainSection,
    pub network: NetworkSection,
    pub reference: ReferenceSection,
    pub disturbance: DisturbanceSection,
    pub trial: TrialSection,
    pub output: OutputSection,
}

/// Point-mass plant parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    /// Vehicle mass, kg.
    pub mass: f64,
    /// Gravitational acceleration, m/s².
    pub gravity: f64,
    /// Optional per-axis actuator saturation, N.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_limit: Option<f64>,
}

/// Controller gains. The error-feedback gains are per-axis scalars; the
/// plant's mass and gravity come from `[plant]` so they have a single source
/// of truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSection {
    /// Proportional gain per axis, N/m.
    pub kp: [f64; 3],
    /// Integral gain per axis, N/(m·s).
    pub ki: [f64; 3],
    /// Derivative gain per axis, N·s/m.
    pub kd: [f64; 3],
    /// Adaptation rate for the weight-update law.
    pub gamma: f64,
}

/// Feature network: either a box grid of Gaussian kernels or an explicit
/// kernel list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSection {
    /// Regular grid over a state-space box centered on `position_center`
    /// (positions) and the origin (velocities). Axes with a count of 1
    /// collapse to the box midpoint.
    Grid {
        /// Center of the position box, m.
        position_center: [f64; 3],
        /// Half-width of the position box on each axis, m.
        position_half_width: f64,
        /// Half-width of the velocity box on each axis, m/s.
        velocity_half_width: f64,
        /// Kernel counts per state axis (x, y, z, vx, vy, vz).
        counts: [usize; 6],
        /// Kernel bandwidth as a multiple of the largest grid spacing.
        sigma_scale: f64,
    },
    /// Kernels listed one by one.
    Explicit { kernels: Vec<KernelSection> },
}

/// A single Gaussian kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// Kernel center in state space (position m, velocity m/s).
    pub center: [f64; 6],
    /// Kernel bandwidth.
    pub sigma: f64,
}

/// Desired position trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSection {
    /// Hold a fixed set-point, m.
    Constant { point: [f64; 3] },
    /// Quintic blend from `from` to `to` over `[start, start + duration]`.
    SmoothStep {
        from: [f64; 3],
        to: [f64; 3],
        start: f64,
        duration: f64,
    },
    /// Piecewise-quintic schedule through timed waypoints.
    Waypoints { waypoints: Vec<WaypointSection> },
}

/// A timed target point on a waypoint schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointSection {
    /// Arrival time, s.
    pub t: f64,
    /// Target position, m.
    pub point: [f64; 3],
}

/// Range with inclusive bounds, used by scenario sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSection {
    pub lo: f64,
    pub hi: f64,
}

/// External disturbance force acting on the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceSection {
    /// No disturbance.
    Zero,
    /// Constant force, N.
    ConstantBias { force: [f64; 3] },
    /// Sinusoidal force with a shared phase across axes.
    Sinusoid {
        /// Per-axis amplitude, N.
        amplitude: [f64; 3],
        frequency_hz: f64,
        /// Phase offset, rad.
        phase: f64,
    },
    /// Linear spring pulling toward `anchor`, N/m.
    TetherSpring { anchor: [f64; 3], stiffness: f64 },
    /// Force field realized by the controller's own network with known
    /// weights — one `[x, y, z]` row per kernel, so the field is exactly
    /// representable by the adaptive term.
    RbfTruth { weights: Vec<[f64; 3]> },
    /// Sum of several disturbances.
    Composite { parts: Vec<DisturbanceSection> },
    /// Seeded random draw: bias + sinusoid + tether, with magnitudes scaled
    /// to the hover force. Each trial seed draws one concrete instance.
    Scenario {
        bias_frac: BandSection,
        sine_frac: BandSection,
        sine_freq_hz: BandSection,
        tether_distance: BandSection,
        tether_frac: BandSection,
    },
}

/// Trial protocol shared by both arms of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSection {
    /// Trials per arm; trial `k` uses seed `seed_base + k`.
    pub count: usize,
    /// Trial length, s.
    pub duration: f64,
    /// Integrator step, s.
    pub dt: f64,
    pub seed_base: u64,
    /// Initial position offset from the reference start point, m. Trials
    /// start at rest.
    pub initial_offset: [f64; 3],
}

/// Where artifacts are written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; created if missing.
    pub directory: String,
}

/// Live simulation objects built from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub plant: PlantParams,
    pub gains: GainSet,
    pub network: RbfNetwork,
    pub reference: ReferenceSignal,
    pub disturbance: DisturbanceSpec,
    pub initial: SimState,
    pub count: usize,
    pub duration: f64,
    pub dt: f64,
    pub seed_base: u64,
    pub output_dir: PathBuf,
}

fn vec3(v: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn state6(v: &[f64; 6]) -> SVector<f64, STATE_DIM> {
    SVector::from_row_slice(v)
}

fn band(name: &str, b: &BandSection) -> Result<Band> {
    Band::new(b.lo, b.hi)
        .map_err(|e| Error::Config(format!("disturbance scenario band `{name}`: {e}")))
}

impl NetworkSection {
    fn build(&self) -> Result<RbfNetwork> {
        match self {
            Self::Grid {
                position_center,
                position_half_width,
                velocity_half_width,
                counts,
                sigma_scale,
            } => {
                let c = vec3(position_center);
                let mut lo = SVector::<f64, STATE_DIM>::zeros();
                let mut hi = SVector::<f64, STATE_DIM>::zeros();
                for k in 0..3 {
                    lo[k] = c[k] - position_half_width;
                    hi[k] = c[k] + position_half_width;
                    lo[k + 3] = -velocity_half_width;
                    hi[k + 3] = *velocity_half_width;
                }
                build_grid_network(&lo, &hi, *counts, *sigma_scale)
            }
            Self::Explicit { kernels } => {
                let centers = kernels.iter().map(|k| state6(&k.center)).collect();
                let sigmas = kernels.iter().map(|k| k.sigma).collect();
                RbfNetwork::new(centers, sigmas)
            }
        }
    }
}

impl ReferenceSection {
    fn build(&self) -> Result<ReferenceSignal> {
        let signal = match self {
            Self::Constant { point } => ReferenceSignal::Constant(vec3(point)),
            Self::SmoothStep {
                from,
                to,
                start,
                duration,
            } => ReferenceSignal::SmoothStep {
                from: vec3(from),
                to: vec3(to),
                start: *start,
                duration: *duration,
            },
            Self::Waypoints { waypoints } => ReferenceSignal::Waypoints(
                waypoints
                    .iter()
                    .map(|w| Waypoint {
                        t: w.t,
                        point: vec3(&w.point),
                    })
                    .collect(),
            ),
        };
        signal.validate()?;
        Ok(signal)
    }
}

impl DisturbanceSection {
    /// Converts to a fixed source. `net` backs the `RbfTruth` variant so the
    /// planted field lives in the controller's own feature basis.
    fn build_source(&self, net: &RbfNetwork) -> Result<DisturbanceSource> {
        Ok(match self {
            Self::Zero => DisturbanceSource::Zero,
            Self::ConstantBias { force } => DisturbanceSource::ConstantBias(vec3(force)),
            Self::Sinusoid {
                amplitude,
                frequency_hz,
                phase,
            } => DisturbanceSource::Sinusoid {
                amplitude: vec3(amplitude),
                frequency_hz: *frequency_hz,
                phase: *phase,
            },
            Self::TetherSpring { anchor, stiffness } => DisturbanceSource::TetherSpring {
                anchor: vec3(anchor),
                stiffness: *stiffness,
            },
            Self::RbfTruth { weights } => {
                if weights.len() != net.len() {
                    return Err(Error::Config(format!(
                        "rbf_truth needs one weight row per kernel: got {} rows for {} kernels",
                        weights.len(),
                        net.len()
                    )));
                }
                DisturbanceSource::RbfTruth {
                    net: net.clone(),
                    weights: WeightMatrix::from_rows(weights)?,
                }
            }
            Self::Composite { parts } => DisturbanceSource::Composite(
                parts
                    .iter()
                    .map(|p| p.build_source(net))
                    .collect::<Result<Vec<_>>>()?,
            ),
            Self::Scenario { .. } => {
                return Err(Error::Config(
                    "a scenario disturbance cannot be nested inside a composite; \
                     list concrete sources instead"
                        .into(),
                ))
            }
        })
    }

    fn build(&self, net: &RbfNetwork) -> Result<DisturbanceSpec> {
        let spec = match self {
            Self::Scenario {
                bias_frac,
                sine_frac,
                sine_freq_hz,
                tether_distance,
                tether_frac,
            } => DisturbanceSpec::Scenario(CompositeScenario {
                bias_frac: band("bias_frac", bias_frac)?,
                sine_frac: band("sine_frac", sine_frac)?,
                sine_freq_hz: band("sine_freq_hz", sine_freq_hz)?,
                tether_distance: band("tether_distance", tether_distance)?,
                tether_frac: band("tether_frac", tether_frac)?,
            }),
            fixed => DisturbanceSpec::Fixed(fixed.build_source(net)?),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl RunConfig {
    /// Reads and parses a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialize error: {e}")))
    }

    /// Builds the live simulation objects, validating as it goes. Trials
    /// start at rest, offset from the reference position at time zero.
    pub fn build(&self) -> Result<Experiment> {
        let plant = PlantParams::new(self.plant.mass, self.plant.gravity, self.plant.force_limit)?;
        let gains = GainSet::new(
            vec3(&self.gains.kp),
            vec3(&self.gains.ki),
            vec3(&self.gains.kd),
            self.plant.mass,
            self.plant.gravity,
            self.gains.gamma,
        )?;
        let network = self.network.build()?;
        let reference = self.reference.build()?;
        let disturbance = self.disturbance.build(&network)?;
        let start = reference.sample(0.0).r_d + vec3(&self.trial.initial_offset);
        let initial = SimState::new(start, Vector3::zeros(), 0.0)?;
        Ok(Experiment {
            plant,
            gains,
            network,
            reference,
            disturbance,
            initial,
            count: self.trial.count,
            duration: self.trial.duration,
            dt: self.trial.dt,
            seed_base: self.trial.seed_base,
            output_dir: PathBuf::from(&self.output.directory),
        })
    }
}
