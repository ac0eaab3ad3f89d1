//! Simulation library for a model-reference adaptive position controller on a
//! point-mass flyer.
//!
//! The crate is organized bottom-up:
//!
//! - [`rbf`] — Gaussian feature basis and linear-in-parameters force model.
//! - [`plant`] — translational dynamics under configurable disturbances, with
//!   a fixed-step RK4 integrator.
//! - [`reference`] — smooth reference trajectories (constant set-points,
//!   quintic step blends, waypoint schedules).
//! - [`lyapunov`] — closed-loop error-system matrices, Hurwitz certification,
//!   and the continuous Lyapunov equation solver that produces the adaptation
//!   law's `P` matrix.
//! - [`controller`] — the PID-plus-feedforward control law, the reference
//!   model, the weight-update law, and the coupled closed-loop stepper.
//! - [`scenario`] — seeded sampling of disturbance scenarios for repeatable
//!   batches.
//! - [`harness`] — trial execution, RMS metrics, batch aggregation, and the
//!   paired adaptive-versus-baseline comparison protocol.
//! - [`defaults`] — the tuned hover configuration shared by the CLI and the
//!   test suites.

pub mod controller;
pub mod defaults;
pub mod error;
pub mod harness;
pub mod lyapunov;
pub mod plant;
pub mod rbf;
pub mod reference;
pub mod scenario;

pub use error::{Error, Result};
