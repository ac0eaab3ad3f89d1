//! Pinned defaults for the hovering experiment.
//!
//! Everything here is overridable through the CLI config file; these values
//! define the stock protocol: a 9.5e-5 kg point mass holding a 10 cm hover
//! setpoint for 20 s at a 1 kHz control rate, with gains pole-placed at
//! {-6, -8, -10} rad/s per axis and a 27-kernel grid network covering the
//! position box around the setpoint.

use nalgebra::{SVector, Vector3};

use crate::controller::GainSet;
use crate::lyapunov::Matrix9;
use crate::plant::{PlantParams, SimState};
use crate::rbf::{build_grid_network, RbfNetwork};
use crate::reference::ReferenceSignal;

/// Vehicle mass (kg).
pub const MASS: f64 = 9.5e-5;

/// Gravitational acceleration (m/s^2).
pub const GRAVITY: f64 = 9.81;

/// Adaptation gain.
///
/// The discrete adaptation loop couples the feature scale `||phi||` and the
/// force-injection scale `||B^T P|| ~ 1/m` into an effective update frequency
/// of roughly `2.6e3 * sqrt(gamma)` rad/s for this vehicle; at the 1 kHz step
/// rate the integrator is stable only while that stays below ~2.8e3 rad/s.
/// 5e-3 keeps a ~25x frequency margin while still settling the weights well
/// inside a 20 s trial.
pub const GAMMA: f64 = 5e-3;

/// Simulation step (s).
pub const DT: f64 = 1e-3;

/// Trial length (s).
pub const TRIAL_DURATION: f64 = 20.0;

/// Trials per arm.
pub const TRIAL_COUNT: usize = 5;

/// First trial seed; trial `k` uses `seed_base + k`.
pub const SEED_BASE: u64 = 1;

/// Per-axis closed-loop pole magnitudes (rad/s) behind the default gains.
pub const POLE_MAGNITUDES: [f64; 3] = [6.0, 8.0, 10.0];

/// Half-width of the kernel grid around the setpoint, position axes (m).
pub const GRID_POSITION_HALF_WIDTH: f64 = 0.2;

/// Half-width of the kernel grid around zero velocity (m/s).
pub const GRID_VELOCITY_HALF_WIDTH: f64 = 0.5;

/// Kernels per axis: 3 per position axis, velocity axes collapsed.
pub const GRID_COUNTS: [usize; 6] = [3, 3, 3, 1, 1, 1];

/// Kernel bandwidth as a multiple of the largest grid spacing.
pub const GRID_SIGMA_SCALE: f64 = 1.0;

/// Hover setpoint (m).
pub fn hover_point() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, 0.10)
}

/// Initial position offset from the setpoint (m), exercising the transient.
pub fn initial_offset() -> Vector3<f64> {
    Vector3::new(0.01, 0.01, -0.01)
}

/// Default gains: pole placement at {-6, -8, -10} rad/s per axis, i.e.
/// `(s+6)(s+8)(s+10) = s^3 + 24 s^2 + 188 s + 480`, scaled by the mass.
pub fn gains() -> GainSet {
    GainSet::new(
        Vector3::from_element(188.0 * MASS),
        Vector3::from_element(480.0 * MASS),
        Vector3::from_element(24.0 * MASS),
        MASS,
        GRAVITY,
        GAMMA,
    )
    .expect("default gains are valid")
}

/// Default plant: stock mass and gravity, no force saturation (saturation
/// would break the linear error-dynamics analysis the monitors assume).
pub fn plant() -> PlantParams {
    PlantParams::new(MASS, GRAVITY, None).expect("default plant parameters are valid")
}

/// Default reference: constant hover at [`hover_point`].
pub fn reference() -> ReferenceSignal {
    ReferenceSignal::Constant(hover_point())
}

/// Default initial state: setpoint plus [`initial_offset`], at rest, t = 0.
pub fn initial_state() -> SimState {
    SimState::new(hover_point() + initial_offset(), Vector3::zeros(), 0.0)
        .expect("default initial state is finite")
}

/// Default kernel grid: 27 centers over the position box around the
/// setpoint, velocity axes collapsed to zero.
pub fn network() -> RbfNetwork {
    let hover = hover_point();
    let mut lo = SVector::<f64, 6>::zeros();
    let mut hi = SVector::<f64, 6>::zeros();
    for k in 0..3 {
        lo[k] = hover[k] - GRID_POSITION_HALF_WIDTH;
        hi[k] = hover[k] + GRID_POSITION_HALF_WIDTH;
        lo[3 + k] = -GRID_VELOCITY_HALF_WIDTH;
        hi[3 + k] = GRID_VELOCITY_HALF_WIDTH;
    }
    build_grid_network(&lo, &hi, GRID_COUNTS, GRID_SIGMA_SCALE)
        .expect("default grid parameters are valid")
}

/// Lyapunov right-hand side: identity, making its smallest eigenvalue 1.
pub fn q_matrix() -> Matrix9 {
    Matrix9::identity()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_construct_and_agree_with_each_other() {
        let gains = gains();
        assert_eq!(gains.m, plant().m);
        assert_eq!(gains.g, plant().g);
        assert_eq!(network().len(), 27);
        let s0 = initial_state();
        assert_eq!(s0.t, 0.0);
        assert!((s0.r - Vector3::new(0.01, 0.01, 0.09)).norm() < 1e-15);
    }

    #[test]
    fn default_grid_sits_around_the_setpoint() {
        let net = network();
        // Velocity components of every center collapse to 0.
        for c in net.centers() {
            for k in 3..6 {
                assert_eq!(c[k], 0.0);
            }
        }
        // The setpoint itself is one of the centers.
        let hover = hover_point();
        assert!(net
            .centers()
            .iter()
            .any(|c| (c.fixed_rows::<3>(0) - hover).norm() < 1e-15));
        for s in net.bandwidths() {
            assert!((s - 0.2).abs() < 1e-15);
        }
    }
}
