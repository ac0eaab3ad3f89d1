//! Translational point-mass dynamics under a configurable disturbance.
//!
//! The model is `m r'' = f - m g n3 + d` with thrust applied directly as a
//! 3-vector (the attitude loop is assumed fast enough that commanded and
//! realized force directions coincide), plus a disturbance force `d` drawn
//! from one of several sources. Integration is classical fixed-step RK4 with
//! the commanded force re-evaluated at every stage.

use nalgebra::{SVector, Vector3};

use crate::error::{Error, Result};
use crate::rbf::{self, RbfNetwork, WeightMatrix, STATE_DIM};

/// Gravity direction: forces act against `+n3`.
pub const N3: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Position/velocity state of the center of mass at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    /// Position in the inertial frame, m.
    pub r: Vector3<f64>,
    /// Velocity, m/s.
    pub v: Vector3<f64>,
    /// Time, s.
    pub t: f64,
}

impl SimState {
    pub fn new(r: Vector3<f64>, v: Vector3<f64>, t: f64) -> Result<Self> {
        let s = Self { r, v, t };
        s.check_finite()?;
        Ok(s)
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.r.iter().chain(self.v.iter()).all(|c| c.is_finite()) && self.t.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("simulation state"))
        }
    }

    /// Stacked state `x = [r, v]` used by the feature basis.
    pub fn x(&self) -> SVector<f64, STATE_DIM> {
        let mut x = SVector::<f64, STATE_DIM>::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.r);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x
    }
}

/// Physical constants of the flyer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    /// Mass, kg.
    pub m: f64,
    /// Gravitational acceleration, m/s^2.
    pub g: f64,
    /// Optional cap on the commanded force magnitude, N. Applied by the
    /// closed-loop stepper before the force reaches the plant; `rk4_step`
    /// itself takes the force as given.
    pub force_limit: Option<f64>,
}

impl PlantParams {
    pub fn new(m: f64, g: f64, force_limit: Option<f64>) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Config(format!("mass must be positive, got {m}")));
        }
        if !(g.is_finite() && g >= 0.0) {
            return Err(Error::Config(format!(
                "gravity must be nonnegative, got {g}"
            )));
        }
        if let Some(l) = force_limit {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!(
                    "force limit must be positive, got {l}"
                )));
            }
        }
        Ok(Self { m, g, force_limit })
    }

    /// Thrust that balances gravity, `m g` (N).
    pub fn hover_force(&self) -> f64 {
        self.m * self.g
    }
}

/// The disturbance force acting on the flyer.
///
/// `RbfTruth` realizes the feature-basis force model exactly (so the
/// compensator's structure can represent it); the rest stand in for tether
/// tension, gusts, and other steady or slowly varying pulls. `Composite` sums
/// several sources, which is how the mixed default scenario is expressed.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceSource {
    Zero,
    /// Constant force, N.
    ConstantBias(Vector3<f64>),
    /// `amplitude * sin(2 pi f t + phase)` applied per axis, N.
    Sinusoid {
        amplitude: Vector3<f64>,
        frequency_hz: f64,
        phase: f64,
    },
    /// Linear spring pulling the flyer toward `anchor`, N/m.
    TetherSpring {
        anchor: Vector3<f64>,
        stiffness: f64,
    },
    /// Exact feature-basis disturbance `W^T phi(x)`.
    RbfTruth {
        net: RbfNetwork,
        weights: WeightMatrix,
    },
    /// Sum of the listed sources.
    Composite(Vec<DisturbanceSource>),
}

impl DisturbanceSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Zero => Ok(()),
            Self::ConstantBias(b) => {
                if b.iter().all(|c| c.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::NonFinite("bias force"))
                }
            }
            Self::Sinusoid {
                amplitude,
                frequency_hz,
                phase,
            } => {
                if !amplitude.iter().all(|c| c.is_finite()) || !phase.is_finite() {
                    return Err(Error::NonFinite("sinusoid parameters"));
                }
                if !(frequency_hz.is_finite() && *frequency_hz >= 0.0) {
                    return Err(Error::Config(format!(
                        "sinusoid frequency must be nonnegative, got {frequency_hz}"
                    )));
                }
                Ok(())
            }
            Self::TetherSpring { anchor, stiffness } => {
                if !anchor.iter().all(|c| c.is_finite()) {
                    return Err(Error::NonFinite("tether anchor"));
                }
                if !(stiffness.is_finite() && *stiffness >= 0.0) {
                    return Err(Error::Config(format!(
                        "tether stiffness must be nonnegative, got {stiffness}"
                    )));
                }
                Ok(())
            }
            Self::RbfTruth { net, weights } => {
                if weights.nrows() != net.len() {
                    return Err(Error::Shape(format!(
                        "disturbance weights have {} rows for a {}-kernel network",
                        weights.nrows(),
                        net.len()
                    )));
                }
                Ok(())
            }
            Self::Composite(parts) => {
                for p in parts {
                    p.validate()?;
                }
                Ok(())
            }
        }
    }

    /// The true weight matrix, when this disturbance is exactly the feature
    /// model (used by monitors that need the weight error). A composite is
    /// never "exact" even if it contains an `RbfTruth` part.
    pub fn known_weights(&self) -> Option<(&RbfNetwork, &WeightMatrix)> {
        match self {
            Self::RbfTruth { net, weights } => Some((net, weights)),
            _ => None,
        }
    }
}

/// Evaluates the disturbance force at state `x` and time `t`.
pub fn disturbance_eval(
    src: &DisturbanceSource,
    x: &SVector<f64, STATE_DIM>,
    t: f64,
) -> Result<Vector3<f64>> {
    if !x.iter().all(|c| c.is_finite()) || !t.is_finite() {
        return Err(Error::NonFinite("disturbance evaluation point"));
    }
    match src {
        DisturbanceSource::Zero => Ok(Vector3::zeros()),
        DisturbanceSource::ConstantBias(b) => Ok(*b),
        DisturbanceSource::Sinusoid {
            amplitude,
            frequency_hz,
            phase,
        } => {
            let s = (2.0 * std::f64::consts::PI * frequency_hz * t + phase).sin();
            Ok(amplitude * s)
        }
        DisturbanceSource::TetherSpring { anchor, stiffness } => {
            let r = x.fixed_rows::<3>(0).into_owned();
            Ok((anchor - r) * *stiffness)
        }
        DisturbanceSource::RbfTruth { net, weights } => {
            let phi = rbf::eval_phi(x, net)?;
            rbf::eval_force(weights, &phi)
        }
        DisturbanceSource::Composite(parts) => {
            let mut sum = Vector3::zeros();
            for p in parts {
                sum += disturbance_eval(p, x, t)?;
            }
            Ok(sum)
        }
    }
}

/// Time derivative of a [`SimState`].
#[derive(Debug, Clone, Copy)]
pub struct StateDeriv {
    pub dr: Vector3<f64>,
    pub dv: Vector3<f64>,
}

/// `r' = v`, `v' = (f - m g n3 + d) / m`.
pub fn dynamics_deriv(
    s: &SimState,
    f: &Vector3<f64>,
    d: &Vector3<f64>,
    p: &PlantParams,
) -> Result<StateDeriv> {
    s.check_finite()?;
    if !f.iter().chain(d.iter()).all(|c| c.is_finite()) {
        return Err(Error::NonFinite("force input"));
    }
    Ok(StateDeriv {
        dr: s.v,
        dv: (f - N3 * (p.m * p.g) + d) / p.m,
    })
}

/// One classical RK4 step of the plant.
///
/// The commanded force is re-evaluated at every stage via `force_fn(state, t)`
/// and the disturbance at every stage state and time, so smooth closed-loop
/// laws integrate at full fourth order.
pub fn rk4_step<F>(
    s: &SimState,
    dt: f64,
    force_fn: F,
    dist: &DisturbanceSource,
    p: &PlantParams,
) -> Result<SimState>
where
    F: Fn(&SimState, f64) -> Vector3<f64>,
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!(
            "step size must be positive, got {dt}"
        )));
    }
    s.check_finite()?;

    // Anything non-finite from here on means the trajectory (or its force
    // law) blew up mid-step, which callers want reported as a divergence at
    // a known time rather than as a plain input error.
    let eval = |r: Vector3<f64>, v: Vector3<f64>, t: f64| -> Result<StateDeriv> {
        let stage = SimState { r, v, t };
        let f = force_fn(&stage, t);
        let d = disturbance_eval(dist, &stage.x(), t)?;
        dynamics_deriv(&stage, &f, &d, p)
    };
    let diverged = |what: &str| Error::Diverged {
        t: s.t,
        what: what.into(),
    };

    let t = s.t;
    let k1 = eval(s.r, s.v, t).map_err(|_| diverged("non-finite values in RK4 stage 1"))?;
    let k2 = eval(
        s.r + k1.dr * (dt / 2.0),
        s.v + k1.dv * (dt / 2.0),
        t + dt / 2.0,
    )
    .map_err(|_| diverged("non-finite values in RK4 stage 2"))?;
    let k3 = eval(
        s.r + k2.dr * (dt / 2.0),
        s.v + k2.dv * (dt / 2.0),
        t + dt / 2.0,
    )
    .map_err(|_| diverged("non-finite values in RK4 stage 3"))?;
    let k4 = eval(s.r + k3.dr * dt, s.v + k3.dv * dt, t + dt)
        .map_err(|_| diverged("non-finite values in RK4 stage 4"))?;

    let next = SimState {
        r: s.r + (k1.dr + k2.dr * 2.0 + k3.dr * 2.0 + k4.dr) * (dt / 6.0),
        v: s.v + (k1.dv + k2.dv * 2.0 + k3.dv * 2.0 + k4.dv) * (dt / 6.0),
        t: t + dt,
    };
    next.check_finite().map_err(|_| Error::Diverged {
        t: s.t,
        what: "RK4 step produced a non-finite state".into(),
    })?;
    Ok(next)
}
