//! Control law, error-state bookkeeping, weight adaptation, and the coupled
//! closed-loop integrator.
//!
//! The control force is a per-axis PID on the tracking error plus
//! feedforward of the reference acceleration and gravity, minus the adaptive
//! compensation term `f_a = W_hat^T phi(x)`. The weights follow the
//! Lyapunov-derived law `W_hat' = -gamma phi z~^T P^T B`, driven by the gap
//! `z~` between the disturbance-free reference model and the actual stacked
//! error state.

use nalgebra::{DVector, Dyn, OMatrix, RowVector3, Vector3, U3};

use crate::error::{Error, Result};
use crate::lyapunov::{self, LyapunovCert, Matrix9, Matrix9x3, SystemMatrices, Vector9};
use crate::plant::{disturbance_eval, DisturbanceSource, PlantParams, SimState, N3};
use crate::rbf::{eval_force, eval_phi, RbfNetwork, WeightMatrix};
use crate::reference::{ReferenceSample, ReferenceSignal};

/// Positions drifting beyond this (m) or speeds beyond it (m/s) abort a run
/// as divergent; anything near this scale is physically meaningless for a
/// desk-scale flyer long before numbers overflow.
pub const STATE_DIVERGENCE_LIMIT: f64 = 1e6;

/// Weight-norm bound (N) past which a run is declared divergent.
pub const WEIGHT_DIVERGENCE_LIMIT: f64 = 1e9;

/// Diagonal PID gains, mass, gravity, and adaptation gain for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSet {
    /// Proportional gains per axis, N/m.
    pub kp: Vector3<f64>,
    /// Integral gains per axis, N/(m s).
    pub ki: Vector3<f64>,
    /// Derivative gains per axis, N s/m.
    pub kd: Vector3<f64>,
    /// Mass, kg.
    pub m: f64,
    /// Gravitational acceleration, m/s^2.
    pub g: f64,
    /// Adaptation gain; zero disables weight motion entirely.
    pub gamma: f64,
}

impl GainSet {
    /// Validates `kp, kd > 0` per axis, `ki >= 0`, `m > 0`, `g >= 0`,
    /// `gamma >= 0`.
    ///
    /// `ki = 0` is accepted here on purpose: it leaves a closed-loop pole at
    /// the origin, which the stability certifier reports as a certification
    /// failure with the offending eigenvalue — a more useful diagnosis than a
    /// parse-time rejection. `gamma = 0` means "adaptation off".
    pub fn new(
        kp: Vector3<f64>,
        ki: Vector3<f64>,
        kd: Vector3<f64>,
        m: f64,
        g: f64,
        gamma: f64,
    ) -> Result<Self> {
        let all_finite = kp
            .iter()
            .chain(ki.iter())
            .chain(kd.iter())
            .all(|v| v.is_finite())
            && m.is_finite()
            && g.is_finite()
            && gamma.is_finite();
        if !all_finite {
            return Err(Error::NonFinite("gain set"));
        }
        if kp.iter().any(|&v| v <= 0.0) || kd.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config(
                "proportional and derivative gains must be positive on every axis".into(),
            ));
        }
        if ki.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("integral gains must be nonnegative".into()));
        }
        if m <= 0.0 {
            return Err(Error::Config(format!("mass must be positive, got {m}")));
        }
        if g < 0.0 {
            return Err(Error::Config(format!(
                "gravity must be nonnegative, got {g}"
            )));
        }
        if gamma < 0.0 {
            return Err(Error::Config(format!(
                "adaptation gain must be nonnegative, got {gamma}"
            )));
        }
        Ok(Self {
            kp,
            ki,
            kd,
            m,
            g,
            gamma,
        })
    }
}

/// Tracking-error bookkeeping around one plant state.
///
/// `xi` is the caller-maintained integral of the position error; its first
/// and second derivatives are the position and velocity errors, so the
/// stacked vector `z = [xi, xi', xi'']` turns the closed loop into a linear
/// state-space system (plus the disturbance/compensation mismatch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState {
    /// Integral of the position error, m s.
    pub xi: Vector3<f64>,
    /// Position error `r_d - r`, m.
    pub xi_dot: Vector3<f64>,
    /// Velocity error `r_d' - v`, m/s.
    pub xi_ddot: Vector3<f64>,
}

impl ErrorState {
    /// Combines the stored integral with freshly computed error derivatives.
    pub fn assemble(xi: Vector3<f64>, reference: &ReferenceSample, s: &SimState) -> Self {
        let (xi_dot, xi_ddot) = error_derivatives(reference, s);
        Self {
            xi,
            xi_dot,
            xi_ddot,
        }
    }

    /// Stacked error state `z = [xi, xi', xi'']` (order fixed).
    pub fn z(&self) -> Vector9 {
        let mut z = Vector9::zeros();
        z.fixed_rows_mut::<3>(0).copy_from(&self.xi);
        z.fixed_rows_mut::<3>(3).copy_from(&self.xi_dot);
        z.fixed_rows_mut::<3>(6).copy_from(&self.xi_ddot);
        z
    }
}

/// First and second derivatives of the error integral: the position error
/// `r_d - r` and velocity error `r_d' - v`.
pub fn error_derivatives(
    reference: &ReferenceSample,
    s: &SimState,
) -> (Vector3<f64>, Vector3<f64>) {
    (reference.r_d - s.r, reference.v_d - s.v)
}

/// The non-adaptive part of the control force: per-axis PID on the tracking
/// error plus reference-acceleration and gravity feedforward.
fn pid_feedforward(reference: &ReferenceSample, es: &ErrorState, gains: &GainSet) -> Vector3<f64> {
    gains.kp.component_mul(&es.xi_dot)
        + gains.ki.component_mul(&es.xi)
        + gains.kd.component_mul(&es.xi_ddot)
        + reference.a_d * gains.m
        + N3 * (gains.m * gains.g)
}

/// Full control force: PID + feedforward minus the adaptive compensation
/// `f_a = W_hat^T phi(x)`.
pub fn control_force(
    reference: &ReferenceSample,
    s: &SimState,
    es: &ErrorState,
    w_hat: &WeightMatrix,
    net: &RbfNetwork,
    gains: &GainSet,
) -> Result<Vector3<f64>> {
    let phi = eval_phi(&s.x(), net)?;
    let f_a = eval_force(w_hat, &phi)?;
    Ok(pid_feedforward(reference, es, gains) - f_a)
}

/// Advances the disturbance-free reference model `z_r' = A z_r` one RK4 step.
pub fn reference_model_step(z_r: &Vector9, a: &Matrix9, dt: f64) -> Vector9 {
    let k1 = a * z_r;
    let k2 = a * (z_r + k1 * (dt / 2.0));
    let k3 = a * (z_r + k2 * (dt / 2.0));
    let k4 = a * (z_r + k3 * dt);
    z_r + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Weight velocity `W_hat' = -gamma phi (z~^T P^T B)`: rank one, pointing
/// along the feature vector.
pub fn weight_rate(
    phi: &DVector<f64>,
    z_tilde: &Vector9,
    p: &Matrix9,
    b: &Matrix9x3,
    gamma: f64,
) -> OMatrix<f64, Dyn, U3> {
    let row: RowVector3<f64> = (z_tilde.transpose() * p.transpose() * b) * (-gamma);
    phi * row
}

/// Explicit-Euler weight update `W_hat + dt * W_hat'`.
///
/// This is the standalone discrete form of the adaptation law; the coupled
/// closed-loop stepper instead folds [`weight_rate`] into its own integration
/// stages (see [`ClosedLoopSystem::step`]). A non-finite update is reported
/// as an error; the closed-loop driver attaches the simulation time to it.
pub fn adapt_step(
    w_hat: &WeightMatrix,
    phi: &DVector<f64>,
    z_tilde: &Vector9,
    p: &Matrix9,
    b: &Matrix9x3,
    gamma: f64,
    dt: f64,
) -> Result<WeightMatrix> {
    if w_hat.nrows() != phi.len() {
        return Err(Error::Shape(format!(
            "weight matrix has {} rows but phi has {} components",
            w_hat.nrows(),
            phi.len()
        )));
    }
    let next = w_hat.as_matrix() + weight_rate(phi, z_tilde, p, b, gamma) * dt;
    WeightMatrix::new(next).map_err(|_| Error::NonFinite("adaptation update"))
}

/// Everything immutable during a closed-loop run: plant, gains, kernel
/// network, certified error-system matrices, reference, and disturbance.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    pub gains: GainSet,
    pub plant: PlantParams,
    pub net: RbfNetwork,
    pub matrices: SystemMatrices,
    pub cert: LyapunovCert,
    pub reference: ReferenceSignal,
    pub disturbance: DisturbanceSource,
    /// False forces `f_a = 0` and freezes the weights (benchmark mode).
    pub adaptive: bool,
    /// `P^T B`, precomputed for the adaptation law.
    ptb: Matrix9x3,
    /// True weights when the disturbance is exactly expressible in `net`
    /// (same kernel geometry); enables the full Lyapunov monitor including
    /// the weight-error term.
    true_weights: Option<WeightMatrix>,
}

impl ClosedLoopSystem {
    pub fn new(
        gains: GainSet,
        plant: PlantParams,
        net: RbfNetwork,
        cert: LyapunovCert,
        reference: ReferenceSignal,
        disturbance: DisturbanceSource,
        adaptive: bool,
    ) -> Result<Self> {
        if gains.m != plant.m || gains.g != plant.g {
            return Err(Error::Config(
                "gain set and plant disagree on mass or gravity".into(),
            ));
        }
        reference.validate()?;
        disturbance.validate()?;
        let matrices = lyapunov::assemble_ab(&gains);
        let residual = (matrices.a.transpose() * cert.p + cert.p * matrices.a + cert.q).norm();
        if !(residual <= lyapunov::RESIDUAL_TOLERANCE * cert.q.norm()) {
            return Err(Error::Config(format!(
                "certificate does not match these gains (residual {residual:.3e})"
            )));
        }
        let ptb = cert.p.transpose() * matrices.b;
        let true_weights = disturbance
            .known_weights()
            .filter(|(dist_net, _)| *dist_net == &net)
            .map(|(_, w)| w.clone());
        Ok(Self {
            gains,
            plant,
            net,
            matrices,
            cert,
            reference,
            disturbance,
            adaptive,
            ptb,
            true_weights,
        })
    }

    /// Initial bundle at the plant state `s0`: zero error integral, zero
    /// weights, and the reference model started on the current error state
    /// (`z_r(0) = z(0)`), so the model gap `z~` begins at zero and grows only
    /// from disturbance-induced divergence.
    pub fn initial_state(&self, s0: &SimState) -> Result<ClosedLoopState> {
        s0.check_finite()?;
        let reference = self.reference.sample(s0.t);
        let es = ErrorState::assemble(Vector3::zeros(), &reference, s0);
        Ok(ClosedLoopState {
            t: s0.t,
            r: s0.r,
            v: s0.v,
            xi: Vector3::zeros(),
            z_r: es.z(),
            w_hat: WeightMatrix::zeros(self.net.len()),
        })
    }

    /// Bundle derivative at one integration stage.
    fn deriv(&self, y: &RawBundle) -> Result<BundleDeriv> {
        let s = SimState {
            r: y.r,
            v: y.v,
            t: y.t,
        };
        let reference = self.reference.sample(y.t);
        let es = ErrorState::assemble(y.xi, &reference, &s);
        let phi = eval_phi(&s.x(), &self.net)?;
        let f_a = if self.adaptive {
            (y.w_hat.tr_mul(&phi)).column(0).into_owned()
        } else {
            Vector3::zeros()
        };
        let mut f = pid_feedforward(&reference, &es, &self.gains) - f_a;
        if let Some(limit) = self.plant.force_limit {
            let norm = f.norm();
            if norm > limit {
                f *= limit / norm;
            }
        }
        let d = disturbance_eval(&self.disturbance, &s.x(), y.t)?;
        let dv = (f - N3 * self.plant.hover_force() + d) / self.plant.m;
        let dz_r = self.matrices.a * y.z_r;
        let dw = if self.adaptive && self.gains.gamma > 0.0 {
            let z_tilde = y.z_r - es.z();
            let row: RowVector3<f64> = (z_tilde.transpose() * self.ptb) * (-self.gains.gamma);
            &phi * row
        } else {
            OMatrix::<f64, Dyn, U3>::zeros(self.net.len())
        };
        if !dv.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("acceleration"));
        }
        Ok(BundleDeriv {
            dr: y.v,
            dv,
            dxi: es.xi_dot,
            dz_r,
            dw,
        })
    }

    /// One synchronized RK4 step of the whole bundle: plant state, error
    /// integral, reference model, and weights advance through one shared set
    /// of integration stages, with the control force, features, and
    /// adaptation rate re-evaluated at every stage.
    ///
    /// The coupling matters. Freezing the control force across the step
    /// (sample-and-hold) or advancing the weights by a separate first-order
    /// update both leave O(dt^2)-per-step gaps between the simulated
    /// trajectory and the linear error-dynamics algebra that the Lyapunov
    /// monitors check; at dt = 1e-3 those gaps sit orders of magnitude above
    /// the monitor tolerances. Stage evaluation keeps the discrete trajectory
    /// within O(dt^4) of the continuous closed loop, which the tolerances
    /// absorb comfortably.
    pub fn step(&self, state: &ClosedLoopState, dt: f64) -> Result<ClosedLoopState> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!(
                "step size must be positive, got {dt}"
            )));
        }
        state.check_finite()?;
        if state.w_hat.nrows() != self.net.len() {
            return Err(Error::Shape(format!(
                "weight matrix has {} rows but the network has {} kernels",
                state.w_hat.nrows(),
                self.net.len()
            )));
        }

        let y0 = RawBundle {
            t: state.t,
            r: state.r,
            v: state.v,
            xi: state.xi,
            z_r: state.z_r,
            w_hat: state.w_hat.as_matrix().clone_owned(),
        };
        let diverged = |stage: usize, e: Error| match e {
            Error::NonFinite(_) => Error::Diverged {
                t: state.t,
                what: format!("non-finite values in integration stage {stage}"),
            },
            other => other,
        };
        let k1 = self.deriv(&y0).map_err(|e| diverged(1, e))?;
        let k2 = self
            .deriv(&y0.advanced(&k1, dt / 2.0))
            .map_err(|e| diverged(2, e))?;
        let k3 = self
            .deriv(&y0.advanced(&k2, dt / 2.0))
            .map_err(|e| diverged(3, e))?;
        let k4 = self
            .deriv(&y0.advanced(&k3, dt))
            .map_err(|e| diverged(4, e))?;

        let w = dt / 6.0;
        let next_t = state.t + dt;
        let next = ClosedLoopState {
            t: next_t,
            r: y0.r + (k1.dr + k2.dr * 2.0 + k3.dr * 2.0 + k4.dr) * w,
            v: y0.v + (k1.dv + k2.dv * 2.0 + k3.dv * 2.0 + k4.dv) * w,
            xi: y0.xi + (k1.dxi + k2.dxi * 2.0 + k3.dxi * 2.0 + k4.dxi) * w,
            z_r: y0.z_r + (k1.dz_r + k2.dz_r * 2.0 + k3.dz_r * 2.0 + k4.dz_r) * w,
            w_hat: WeightMatrix::new(y0.w_hat + (k1.dw + k2.dw * 2.0 + k3.dw * 2.0 + k4.dw) * w)
                .map_err(|_| Error::Diverged {
                    t: next_t,
                    what: "non-finite weight update".into(),
                })?,
        };
        if next.check_finite().is_err() {
            return Err(Error::Diverged {
                t: next_t,
                what: "non-finite state after step".into(),
            });
        }
        if next.r.norm() > STATE_DIVERGENCE_LIMIT || next.v.norm() > STATE_DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                t: next_t,
                what: "state left the physical envelope".into(),
            });
        }
        if next.w_hat.frobenius_norm() > WEIGHT_DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                t: next_t,
                what: "weight norm blew up".into(),
            });
        }
        Ok(next)
    }

    /// Telemetry snapshot at the bundle's current time, without advancing it.
    ///
    /// The Lyapunov value includes the weight-error term only when the true
    /// weights are known (disturbance expressible in this network); otherwise
    /// it is the tracking-error quadratic form alone.
    pub fn observe(&self, state: &ClosedLoopState) -> Result<StepRecord> {
        state.check_finite()?;
        let s = SimState {
            r: state.r,
            v: state.v,
            t: state.t,
        };
        let reference = self.reference.sample(state.t);
        let es = ErrorState::assemble(state.xi, &reference, &s);
        let phi = eval_phi(&s.x(), &self.net)?;
        let f_a = if self.adaptive {
            eval_force(&state.w_hat, &phi)?
        } else {
            Vector3::zeros()
        };
        let mut f = pid_feedforward(&reference, &es, &self.gains) - f_a;
        if let Some(limit) = self.plant.force_limit {
            let norm = f.norm();
            if norm > limit {
                f *= limit / norm;
            }
        }
        let z_tilde = state.z_r - es.z();

        let quad = (z_tilde.transpose() * self.cert.p * z_tilde)[0];
        let v_lyap = match (&self.true_weights, self.adaptive && self.gains.gamma > 0.0) {
            (Some(truth), true) => {
                let w_err = (truth.as_matrix() - state.w_hat.as_matrix()).norm();
                quad + w_err * w_err / self.gains.gamma
            }
            _ => quad,
        };
        let v_rate = lyapunov::lyapunov_rate(&z_tilde, &self.cert.q);
        let w_dot_fro = if self.adaptive && self.gains.gamma > 0.0 {
            let row: RowVector3<f64> = z_tilde.transpose() * self.ptb;
            self.gains.gamma * phi.norm() * row.norm()
        } else {
            0.0
        };

        Ok(StepRecord {
            t: state.t,
            r: state.r,
            r_d: reference.r_d,
            r_e: es.xi_dot,
            f,
            f_a,
            v_lyap,
            v_rate,
            w_fro: state.w_hat.frobenius_norm(),
            z_tilde_norm: z_tilde.norm(),
            w_dot_fro,
        })
    }

    /// True weights when the disturbance is exactly expressible in this
    /// system's network, as detected at construction.
    pub fn true_weights(&self) -> Option<&WeightMatrix> {
        self.true_weights.as_ref()
    }
}

/// One synchronized closed-loop step; see [`ClosedLoopSystem::step`].
pub fn mrac_closed_loop_step(
    sys: &ClosedLoopSystem,
    state: &ClosedLoopState,
    dt: f64,
) -> Result<ClosedLoopState> {
    sys.step(state, dt)
}

/// Everything that evolves during a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState {
    /// Time, s.
    pub t: f64,
    /// Position, m.
    pub r: Vector3<f64>,
    /// Velocity, m/s.
    pub v: Vector3<f64>,
    /// Integral of the position error, m s.
    pub xi: Vector3<f64>,
    /// Reference-model state.
    pub z_r: Vector9,
    /// Current weight estimate.
    pub w_hat: WeightMatrix,
}

impl ClosedLoopState {
    fn check_finite(&self) -> Result<()> {
        let ok = self.t.is_finite()
            && self.r.iter().all(|c| c.is_finite())
            && self.v.iter().all(|c| c.is_finite())
            && self.xi.iter().all(|c| c.is_finite())
            && self.z_r.iter().all(|c| c.is_finite());
        // w_hat is finite by construction.
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite("closed-loop state"))
        }
    }
}

/// Stage-local working copy of the bundle (weights unwrapped so intermediate
/// stage values skip validation; the combined result is re-validated).
struct RawBundle {
    t: f64,
    r: Vector3<f64>,
    v: Vector3<f64>,
    xi: Vector3<f64>,
    z_r: Vector9,
    w_hat: OMatrix<f64, Dyn, U3>,
}

impl RawBundle {
    fn advanced(&self, k: &BundleDeriv, h: f64) -> RawBundle {
        RawBundle {
            t: self.t + h,
            r: self.r + k.dr * h,
            v: self.v + k.dv * h,
            xi: self.xi + k.dxi * h,
            z_r: self.z_r + k.dz_r * h,
            w_hat: &self.w_hat + &k.dw * h,
        }
    }
}

/// Derivative of the bundle at one stage.
struct BundleDeriv {
    dr: Vector3<f64>,
    dv: Vector3<f64>,
    dxi: Vector3<f64>,
    dz_r: Vector9,
    dw: OMatrix<f64, Dyn, U3>,
}

/// Telemetry for one simulation step (observed at the step's start time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Time, s.
    pub t: f64,
    /// Position, m.
    pub r: Vector3<f64>,
    /// Reference position, m.
    pub r_d: Vector3<f64>,
    /// Position error `r_d - r`, m.
    pub r_e: Vector3<f64>,
    /// Commanded force, N.
    pub f: Vector3<f64>,
    /// Adaptive compensation force, N (zero in benchmark mode).
    pub f_a: Vector3<f64>,
    /// Lyapunov function value (weight-error term included only when the
    /// true weights are known).
    pub v_lyap: f64,
    /// Model rate `-z~^T Q z~`.
    pub v_rate: f64,
    /// Frobenius norm of the weight estimate.
    pub w_fro: f64,
    /// Norm of the reference-model gap `z~`.
    pub z_tilde_norm: f64,
    /// Frobenius norm of the weight velocity (zero in benchmark mode).
    pub w_dot_fro: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults;
    use crate::lyapunov::{assemble_ab, solve_lyapunov};
    use mrac_testkit as oracle;
    use nalgebra::{DMatrix, SVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hover_reference() -> ReferenceSample {
        defaults::reference().sample(0.0)
    }

    fn default_cert() -> LyapunovCert {
        let sys = assemble_ab(&defaults::gains());
        solve_lyapunov(&sys.a, &defaults::q_matrix()).unwrap()
    }

    fn default_system(disturbance: DisturbanceSource, adaptive: bool) -> ClosedLoopSystem {
        ClosedLoopSystem::new(
            defaults::gains(),
            defaults::plant(),
            defaults::network(),
            default_cert(),
            defaults::reference(),
            disturbance,
            adaptive,
        )
        .unwrap()
    }

    #[test]
    fn gain_set_validation() {
        let ok = Vector3::from_element(1.0);
        assert!(GainSet::new(ok, ok, ok, 1.0, 9.81, 0.5).is_ok());
        // ki = 0 is allowed (certification catches the origin pole).
        assert!(GainSet::new(ok, Vector3::zeros(), ok, 1.0, 9.81, 0.5).is_ok());
        // gamma = 0 is allowed (adaptation off).
        assert!(GainSet::new(ok, ok, ok, 1.0, 9.81, 0.0).is_ok());
        // Strict positivity elsewhere.
        assert!(GainSet::new(Vector3::new(1.0, 0.0, 1.0), ok, ok, 1.0, 9.81, 0.5).is_err());
        assert!(GainSet::new(ok, ok, Vector3::new(1.0, 1.0, -0.1), 1.0, 9.81, 0.5).is_err());
        assert!(GainSet::new(ok, -ok, ok, 1.0, 9.81, 0.5).is_err());
        assert!(GainSet::new(ok, ok, ok, 0.0, 9.81, 0.5).is_err());
        assert!(GainSet::new(ok, ok, ok, 1.0, -1.0, 0.5).is_err());
        assert!(GainSet::new(ok, ok, ok, 1.0, 9.81, -0.5).is_err());
        assert!(GainSet::new(ok, ok, ok, 1.0, 9.81, f64::NAN).is_err());
    }

    #[test]
    fn hover_balance_is_pure_gravity_feedforward() {
        let gains = defaults::gains();
        let reference = hover_reference();
        let s = SimState::new(reference.r_d, Vector3::zeros(), 0.0).unwrap();
        let es = ErrorState::assemble(Vector3::zeros(), &reference, &s);
        let net = defaults::network();
        let w = WeightMatrix::zeros(net.len());
        let f = control_force(&reference, &s, &es, &w, &net, &gains).unwrap();
        assert_eq!(f, Vector3::new(0.0, 0.0, gains.m * gains.g));
    }

    #[test]
    fn adaptive_term_subtracts_from_the_feedforward() {
        let gains = defaults::gains();
        let reference = hover_reference();
        let s = SimState::new(reference.r_d, Vector3::zeros(), 0.0).unwrap();
        let es = ErrorState::assemble(Vector3::zeros(), &reference, &s);
        // Single kernel centered exactly on the state, so phi = [1] and the
        // compensation equals the weight row.
        let net = RbfNetwork::new(vec![s.x()], vec![0.3]).unwrap();
        let w = WeightMatrix::from_rows(&[[0.0, 0.0, 0.1]]).unwrap();
        let f = control_force(&reference, &s, &es, &w, &net, &gains).unwrap();
        assert_eq!(f, Vector3::new(0.0, 0.0, gains.m * gains.g - 0.1));
    }

    #[test]
    fn proportional_term_scales_the_position_error() {
        let positive = Vector3::from_element(1e-3);
        let gains = GainSet::new(
            Vector3::from_element(0.02),
            positive,
            positive,
            defaults::MASS,
            defaults::GRAVITY,
            0.5,
        )
        .unwrap();
        let reference = hover_reference();
        // Position error [0.01, 0, 0], everything else at the reference.
        let s = SimState::new(
            reference.r_d - Vector3::new(0.01, 0.0, 0.0),
            Vector3::zeros(),
            0.0,
        )
        .unwrap();
        let es = ErrorState::assemble(Vector3::zeros(), &reference, &s);
        let net = defaults::network();
        let w = WeightMatrix::zeros(net.len());
        let f = control_force(&reference, &s, &es, &w, &net, &gains).unwrap();
        assert!((f[0] - 2e-4).abs() < 1e-18);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[2], gains.m * gains.g);
    }

    #[test]
    fn control_force_rejects_mismatched_weights() {
        let gains = defaults::gains();
        let reference = hover_reference();
        let s = SimState::new(reference.r_d, Vector3::zeros(), 0.0).unwrap();
        let es = ErrorState::assemble(Vector3::zeros(), &reference, &s);
        let net = defaults::network();
        let w = WeightMatrix::zeros(net.len() + 1);
        assert!(matches!(
            control_force(&reference, &s, &es, &w, &net, &gains),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn perfect_tracking_zeroes_the_error_derivatives() {
        let reference = hover_reference();
        let s = SimState::new(reference.r_d, reference.v_d, 0.0).unwrap();
        let (e, e_dot) = error_derivatives(&reference, &s);
        assert_eq!(e, Vector3::zeros());
        assert_eq!(e_dot, Vector3::zeros());
    }

    /// RK4 quadrature of the error integral, for the two analytic cases below.
    fn integrate_xi(r_e: impl Fn(f64) -> Vector3<f64>, t_end: f64, dt: f64) -> Vector3<f64> {
        let steps = (t_end / dt).round() as usize;
        let mut xi = Vector3::zeros();
        for i in 0..steps {
            let t = i as f64 * dt;
            let k1 = r_e(t);
            let k2 = r_e(t + dt / 2.0);
            let k4 = r_e(t + dt);
            xi += (k1 + k2 * 4.0 + k4) * (dt / 6.0);
        }
        xi
    }

    #[test]
    fn constant_error_integrates_to_c_times_t() {
        let c = Vector3::new(0.3, -0.2, 0.05);
        let xi = integrate_xi(|_| c, 2.0, 1e-3);
        assert!((xi - c * 2.0).norm() < 1e-12);
    }

    #[test]
    fn ramp_error_integrates_to_half_t_squared() {
        let u = Vector3::new(1.0, -2.0, 0.5);
        let xi = integrate_xi(|t| u * t, 3.0, 1e-3);
        assert!((xi - u * 4.5).norm() < 1e-11);
    }

    #[test]
    fn reference_model_fixes_the_origin() {
        let a = assemble_ab(&defaults::gains()).a;
        let z = reference_model_step(&Vector9::zeros(), &a, 1e-3);
        assert_eq!(z, Vector9::zeros());
    }

    #[test]
    fn reference_model_matches_the_scalar_exponential() {
        let a = -Matrix9::identity();
        let mut z = Vector9::zeros();
        z[0] = 1.0;

        // Single step at dt = 0.1: the classical one-step RK4 polynomial,
        // within its O(dt^5) truncation of e^{-0.1}.
        let one = reference_model_step(&z, &a, 0.1);
        assert!((one[0] - 0.9048375).abs() < 1e-15);
        assert!((one[0] - (-0.1_f64).exp()).abs() < 1e-7);

        // Ten steps of dt = 0.01 land within 1e-10 of the exponential.
        let mut fine = z;
        for _ in 0..10 {
            fine = reference_model_step(&fine, &a, 0.01);
        }
        assert!((fine[0] - (-0.1_f64).exp()).abs() < 1e-10);
        for row in 1..9 {
            assert_eq!(fine[row], 0.0);
        }
    }

    #[test]
    fn reference_model_matches_the_matrix_exponential_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let a_dyn = oracle::random_hurwitz(&mut rng, 9, 0.5);
            let a = Matrix9::from_fn(|i, j| a_dyn[(i, j)]);
            let z0 = Vector9::from_fn(|_, _| rng.random_range(-1.0..1.0));

            let dt = 1e-3;
            let mut z = z0;
            for _ in 0..1000 {
                z = reference_model_step(&z, &a, dt);
            }

            let expm = oracle::expm(&a_dyn);
            let want = &expm * DMatrix::from_fn(9, 1, |i, _| z0[i]);
            let diff = (0..9)
                .map(|i| (z[i] - want[(i, 0)]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(
                diff <= 1e-8 * z0.norm().max(1.0),
                "endpoint off by {diff:.3e}"
            );
        }
    }

    #[test]
    fn adapt_step_is_identity_for_zero_gap_or_zero_gain() {
        let sys = assemble_ab(&defaults::gains());
        let cert = default_cert();
        let w = WeightMatrix::from_rows(&[[0.1, -0.2, 0.3], [1.0, 2.0, 3.0]]).unwrap();
        let phi = DVector::from_vec(vec![0.7, 0.3]);

        let same = adapt_step(&w, &phi, &Vector9::zeros(), &cert.p, &sys.b, 5.0, 1e-3).unwrap();
        assert_eq!(same.as_matrix(), w.as_matrix());

        let z = Vector9::from_fn(|i, _| i as f64 + 1.0);
        let same = adapt_step(&w, &phi, &z, &cert.p, &sys.b, 0.0, 1e-3).unwrap();
        assert_eq!(same.as_matrix(), w.as_matrix());
    }

    #[test]
    fn adapt_step_hand_example_single_kernel() {
        // One kernel, phi = [1], gap on the last acceleration row, P = I,
        // gamma = dt = 1: the update row is -(z~^T B) = [0, 0, 1/m].
        let sys = assemble_ab(&defaults::gains());
        let w0 = WeightMatrix::zeros(1);
        let phi = DVector::from_vec(vec![1.0]);
        let mut z_tilde = Vector9::zeros();
        z_tilde[8] = 1.0;
        let w = adapt_step(&w0, &phi, &z_tilde, &Matrix9::identity(), &sys.b, 1.0, 1.0).unwrap();
        let inv_m = 1.0 / defaults::MASS;
        assert_eq!(w.as_matrix()[(0, 0)], 0.0);
        assert_eq!(w.as_matrix()[(0, 1)], 0.0);
        assert!((w.as_matrix()[(0, 2)] - inv_m).abs() < 1e-15 * inv_m);
    }

    #[test]
    fn adapt_step_flags_shape_and_finite_problems() {
        let sys = assemble_ab(&defaults::gains());
        let w = WeightMatrix::zeros(2);
        let phi_short = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            adapt_step(
                &w,
                &phi_short,
                &Vector9::zeros(),
                &Matrix9::identity(),
                &sys.b,
                1.0,
                1.0
            ),
            Err(Error::Shape(_))
        ));
        let phi_bad = DVector::from_vec(vec![f64::INFINITY, 1.0]);
        let mut z = Vector9::zeros();
        z[8] = 1.0;
        assert!(matches!(
            adapt_step(&w, &phi_bad, &z, &Matrix9::identity(), &sys.b, 1.0, 1.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_the_coupled_step() {
        let sys = default_system(DisturbanceSource::Zero, true);
        let s0 = SimState::new(defaults::hover_point(), Vector3::zeros(), 0.0).unwrap();
        let state = sys.initial_state(&s0).unwrap();
        let next = sys.step(&state, defaults::DT).unwrap();
        assert!((next.r - state.r).norm() <= 1e-12);
        assert!((next.v - state.v).norm() <= 1e-12);
        assert!((next.xi - state.xi).norm() <= 1e-12);
        assert!((next.z_r - state.z_r).norm() <= 1e-12);
        assert!((next.w_hat.as_matrix() - state.w_hat.as_matrix()).norm() <= 1e-12);
    }

    #[test]
    fn equilibrium_holds_for_ten_seconds() {
        let sys = default_system(DisturbanceSource::Zero, true);
        let s0 = SimState::new(defaults::hover_point(), Vector3::zeros(), 0.0).unwrap();
        let mut state = sys.initial_state(&s0).unwrap();
        for i in 0..10_000 {
            state = sys.step(&state, defaults::DT).unwrap();
            state.t = (i + 1) as f64 * defaults::DT;
            let record = sys.observe(&state).unwrap();
            assert!(
                record.r_e.norm() <= 1e-10,
                "tracking error {:.3e} at t = {:.3}",
                record.r_e.norm(),
                state.t
            );
        }
    }

    #[test]
    fn constant_bias_with_adaptation_off_matches_the_linear_oracle() {
        // gamma = 0 freezes the weights at zero, so the closed loop is an
        // exactly linear per-axis system with a constant input; compare the
        // vertical-axis error against the modal closed-form solution.
        let bias = -2e-5;
        let gains = GainSet::new(
            defaults::gains().kp,
            defaults::gains().ki,
            defaults::gains().kd,
            defaults::MASS,
            defaults::GRAVITY,
            0.0,
        )
        .unwrap();
        let sys = ClosedLoopSystem::new(
            gains,
            defaults::plant(),
            defaults::network(),
            default_cert(),
            defaults::reference(),
            DisturbanceSource::ConstantBias(Vector3::new(0.0, 0.0, bias)),
            true,
        )
        .unwrap();
        let s0 = SimState::new(defaults::hover_point(), Vector3::zeros(), 0.0).unwrap();
        let mut state = sys.initial_state(&s0).unwrap();

        let response = oracle::BiasAxisResponse::new(
            480.0 * defaults::MASS,
            188.0 * defaults::MASS,
            24.0 * defaults::MASS,
            defaults::MASS,
            bias,
            0.0,
        );

        let dt = defaults::DT;
        let checkpoints = [0.5_f64, 1.0, 2.0, 5.0, 10.0];
        let mut next_check = 0;
        for i in 0..10_000 {
            state = sys.step(&state, dt).unwrap();
            state.t = (i + 1) as f64 * dt;
            if next_check < checkpoints.len()
                && (state.t - checkpoints[next_check]).abs() < dt / 2.0
            {
                let e_sim = defaults::hover_point()[2] - state.r[2];
                let e_ref = response.error_at(state.t);
                assert!(
                    (e_sim - e_ref).abs() <= 1e-9 + 1e-6 * e_ref.abs(),
                    "t = {}: simulated {e_sim:.12e} vs oracle {e_ref:.12e}",
                    state.t
                );
                next_check += 1;
            }
        }
        assert_eq!(next_check, checkpoints.len());
        // Weights never moved.
        assert_eq!(state.w_hat.frobenius_norm(), 0.0);
        // Integral action has absorbed the bias by t = 10 s.
        assert!((defaults::hover_point()[2] - state.r[2]).abs() < 1e-8);
    }

    #[test]
    fn observe_reports_baseline_compensation_as_zero() {
        let sys = default_system(
            DisturbanceSource::ConstantBias(Vector3::new(1e-5, 0.0, -2e-5)),
            false,
        );
        let mut state = sys.initial_state(&defaults::initial_state()).unwrap();
        for _ in 0..200 {
            state = sys.step(&state, defaults::DT).unwrap();
            let record = sys.observe(&state).unwrap();
            assert_eq!(record.f_a, Vector3::zeros());
            assert_eq!(record.w_fro, 0.0);
            assert_eq!(record.w_dot_fro, 0.0);
        }
    }

    #[test]
    fn force_limit_caps_the_commanded_force_norm() {
        let limit = 1.5 * defaults::MASS * defaults::GRAVITY;
        let plant = PlantParams::new(defaults::MASS, defaults::GRAVITY, Some(limit)).unwrap();
        let sys = ClosedLoopSystem::new(
            defaults::gains(),
            plant,
            defaults::network(),
            default_cert(),
            defaults::reference(),
            DisturbanceSource::Zero,
            true,
        )
        .unwrap();
        // Start far from the setpoint so the raw PID force exceeds the cap.
        let s0 = SimState::new(
            defaults::hover_point() + Vector3::new(0.15, -0.15, 0.1),
            Vector3::zeros(),
            0.0,
        )
        .unwrap();
        let mut state = sys.initial_state(&s0).unwrap();
        let mut saw_saturation = false;
        for _ in 0..500 {
            let record = sys.observe(&state).unwrap();
            assert!(record.f.norm() <= limit * (1.0 + 1e-12));
            if record.f.norm() >= limit * (1.0 - 1e-9) {
                saw_saturation = true;
            }
            state = sys.step(&state, defaults::DT).unwrap();
        }
        assert!(saw_saturation, "test setup never reached the force cap");
    }

    #[test]
    fn mismatched_certificate_is_refused() {
        let mut gains = defaults::gains();
        gains.kp *= 2.0;
        let err = ClosedLoopSystem::new(
            gains,
            defaults::plant(),
            defaults::network(),
            default_cert(), // solved for the *default* gains
            defaults::reference(),
            DisturbanceSource::Zero,
            true,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn true_weights_detected_only_for_matching_networks() {
        let net = defaults::network();
        let w = WeightMatrix::zeros(net.len());
        let sys = default_system(
            DisturbanceSource::RbfTruth {
                net: net.clone(),
                weights: w,
            },
            true,
        );
        assert!(sys.true_weights().is_some());

        // A different kernel geometry is not treated as known truth.
        let other = RbfNetwork::new(vec![SVector::<f64, 6>::zeros()], vec![0.5]).unwrap();
        let sys = default_system(
            DisturbanceSource::RbfTruth {
                net: other,
                weights: WeightMatrix::zeros(1),
            },
            true,
        );
        assert!(sys.true_weights().is_none());
    }

    #[test]
    fn oversized_step_is_reported_as_divergence() {
        // Poles at up to -10 rad/s with dt = 1 s sit far outside the RK4
        // stability region, so the reference model (and with it the whole
        // coupled loop) amplifies every step; this must surface as a
        // divergence error with a timestamp, not as garbage output.
        let sys = default_system(DisturbanceSource::Zero, true);
        let mut state = sys.initial_state(&defaults::initial_state()).unwrap();
        let mut outcome = Ok(());
        for _ in 0..2_000 {
            match sys.step(&state, 1.0) {
                Ok(next) => state = next,
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        match outcome {
            Err(Error::Diverged { t, .. }) => assert!(t > 0.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
