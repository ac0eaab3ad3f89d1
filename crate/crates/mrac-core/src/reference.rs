//! Reference trajectories for the position loop.
//!
//! References are evaluated analytically — position, velocity, and
//! acceleration together — so the feedforward terms in the control law never
//! rely on numerical differentiation. All variants are twice continuously
//! differentiable and bounded: steps and waypoint legs are blended with the
//! quintic `s(u) = 10u^3 - 15u^4 + 6u^5`, whose velocity and acceleration
//! vanish at both ends.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Reference position and its first two time derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample {
    /// Desired position, m.
    pub r_d: Vector3<f64>,
    /// Desired velocity, m/s.
    pub v_d: Vector3<f64>,
    /// Desired acceleration, m/s^2.
    pub a_d: Vector3<f64>,
}

/// A timed target point on a waypoint schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    /// Arrival time, s.
    pub t: f64,
    /// Target position, m.
    pub point: Vector3<f64>,
}

/// The desired position trajectory `r_d(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSignal {
    /// Hold a fixed set-point.
    Constant(Vector3<f64>),
    /// Move from `from` to `to` over `[start, start + duration]` along a
    /// quintic blend; hold the endpoints outside that window.
    SmoothStep {
        from: Vector3<f64>,
        to: Vector3<f64>,
        start: f64,
        duration: f64,
    },
    /// Piecewise-quintic schedule through timed waypoints, holding the first
    /// point before the schedule begins and the last one after it ends.
    Waypoints(Vec<Waypoint>),
}

/// Quintic blend and its two derivatives on the unit interval.
fn quintic(u: f64) -> (f64, f64, f64) {
    let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u);
    let dds = 60.0 * u - 180.0 * u * u + 120.0 * u * u * u;
    (s, ds, dds)
}

fn blend(
    from: &Vector3<f64>,
    to: &Vector3<f64>,
    start: f64,
    duration: f64,
    t: f64,
) -> ReferenceSample {
    if t <= start {
        return ReferenceSample {
            r_d: *from,
            v_d: Vector3::zeros(),
            a_d: Vector3::zeros(),
        };
    }
    if t >= start + duration {
        return ReferenceSample {
            r_d: *to,
            v_d: Vector3::zeros(),
            a_d: Vector3::zeros(),
        };
    }
    let u = (t - start) / duration;
    let (s, ds, dds) = quintic(u);
    let span = to - from;
    ReferenceSample {
        r_d: from + span * s,
        v_d: span * (ds / duration),
        a_d: span * (dds / (duration * duration)),
    }
}

impl ReferenceSignal {
    pub fn validate(&self) -> Result<()> {
        let finite3 = |v: &Vector3<f64>| v.iter().all(|c| c.is_finite());
        match self {
            Self::Constant(p) => {
                if finite3(p) {
                    Ok(())
                } else {
                    Err(Error::NonFinite("reference set-point"))
                }
            }
            Self::SmoothStep {
                from,
                to,
                start,
                duration,
            } => {
                if !(finite3(from) && finite3(to) && start.is_finite()) {
                    return Err(Error::NonFinite("smooth-step reference"));
                }
                if !(duration.is_finite() && *duration > 0.0) {
                    return Err(Error::Config(format!(
                        "smooth-step duration must be positive, got {duration}"
                    )));
                }
                Ok(())
            }
            Self::Waypoints(points) => {
                if points.is_empty() {
                    return Err(Error::Config("waypoint schedule is empty".into()));
                }
                for w in points {
                    if !(finite3(&w.point) && w.t.is_finite()) {
                        return Err(Error::NonFinite("waypoint"));
                    }
                }
                for pair in points.windows(2) {
                    if pair[1].t <= pair[0].t {
                        return Err(Error::Config(format!(
                            "waypoint times must be strictly increasing ({} then {})",
                            pair[0].t, pair[1].t
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Evaluates the reference and its derivatives at time `t`.
    pub fn sample(&self, t: f64) -> ReferenceSample {
        match self {
            Self::Constant(p) => ReferenceSample {
                r_d: *p,
                v_d: Vector3::zeros(),
                a_d: Vector3::zeros(),
            },
            Self::SmoothStep {
                from,
                to,
                start,
                duration,
            } => blend(from, to, *start, *duration, t),
            Self::Waypoints(points) => {
                let first = &points[0];
                if t <= first.t || points.len() == 1 {
                    return ReferenceSample {
                        r_d: first.point,
                        v_d: Vector3::zeros(),
                        a_d: Vector3::zeros(),
                    };
                }
                for pair in points.windows(2) {
                    if t <= pair[1].t {
                        return blend(
                            &pair[0].point,
                            &pair[1].point,
                            pair[0].t,
                            pair[1].t - pair[0].t,
                            t,
                        );
                    }
                }
                let last = points.last().expect("validated non-empty");
                ReferenceSample {
                    r_d: last.point,
                    v_d: Vector3::zeros(),
                    a_d: Vector3::zeros(),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth_step() -> ReferenceSignal {
        ReferenceSignal::SmoothStep {
            from: Vector3::new(0.0, 0.0, 0.0),
            to: Vector3::new(0.0, 0.0, 0.1),
            start: 1.0,
            duration: 2.0,
        }
    }

    #[test]
    fn constant_reference_has_zero_derivatives() {
        let r = ReferenceSignal::Constant(Vector3::new(0.0, 0.0, 0.1));
        let s = r.sample(12.3);
        assert_eq!(s.r_d, Vector3::new(0.0, 0.0, 0.1));
        assert_eq!(s.v_d, Vector3::zeros());
        assert_eq!(s.a_d, Vector3::zeros());
    }

    #[test]
    fn smooth_step_holds_endpoints_and_crosses_midpoint() {
        let r = smooth_step();
        assert_eq!(r.sample(0.5).r_d.z, 0.0);
        assert_eq!(r.sample(3.5).r_d.z, 0.1);
        // Quintic blend is exactly half way at mid-time.
        let mid = r.sample(2.0);
        assert!((mid.r_d.z - 0.05).abs() < 1e-15);
        // Peak blend velocity 30/16 * span / duration.
        assert!((mid.v_d.z - 0.1 * (30.0 / 16.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn smooth_step_is_c2_at_the_junctions() {
        let r = smooth_step();
        for t in [1.0, 3.0] {
            let s = r.sample(t);
            assert!(s.v_d.norm() < 1e-12);
            assert!(s.a_d.norm() < 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences_of_position() {
        let r = smooth_step();
        let h = 1e-4;
        for &t in &[1.3, 1.9, 2.4, 2.9] {
            let plus = r.sample(t + h);
            let minus = r.sample(t - h);
            let here = r.sample(t);

            let fd_v = (plus.r_d - minus.r_d) / (2.0 * h);
            assert!(
                (fd_v - here.v_d).norm() <= 1e-6 * here.v_d.norm().max(1e-3),
                "velocity mismatch at t = {t}"
            );
            let fd_a = (plus.r_d - here.r_d * 2.0 + minus.r_d) / (h * h);
            assert!(
                (fd_a - here.a_d).norm() <= 1e-4 * here.a_d.norm().max(1e-2),
                "acceleration mismatch at t = {t}"
            );
        }
    }

    #[test]
    fn waypoints_hold_then_blend_then_hold() {
        let r = ReferenceSignal::Waypoints(vec![
            Waypoint {
                t: 0.0,
                point: Vector3::new(0.0, 0.0, 0.0),
            },
            Waypoint {
                t: 2.0,
                point: Vector3::new(0.1, 0.0, 0.1),
            },
            Waypoint {
                t: 5.0,
                point: Vector3::new(0.1, -0.1, 0.2),
            },
        ]);
        r.validate().unwrap();
        assert_eq!(r.sample(-1.0).r_d, Vector3::new(0.0, 0.0, 0.0));
        assert_eq!(r.sample(2.0).r_d, Vector3::new(0.1, 0.0, 0.1));
        assert_eq!(r.sample(9.0).r_d, Vector3::new(0.1, -0.1, 0.2));
        // Mid-leg velocity points from the previous to the next waypoint.
        let mid = r.sample(3.5);
        assert!(mid.v_d.z > 0.0 && mid.v_d.y < 0.0 && mid.v_d.x.abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_malformed_references() {
        assert!(ReferenceSignal::Waypoints(vec![]).validate().is_err());
        assert!(ReferenceSignal::Waypoints(vec![
            Waypoint {
                t: 1.0,
                point: Vector3::zeros(),
            },
            Waypoint {
                t: 1.0,
                point: Vector3::zeros(),
            },
        ])
        .validate()
        .is_err());
        assert!(ReferenceSignal::SmoothStep {
            from: Vector3::zeros(),
            to: Vector3::zeros(),
            start: 0.0,
            duration: 0.0,
        }
        .validate()
        .is_err());
    }
}
