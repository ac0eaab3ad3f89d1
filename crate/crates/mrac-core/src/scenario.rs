//! Seeded sampling of the mixed disturbance scenario.
//!
//! A batch either reuses one fixed disturbance for every trial or draws a
//! fresh mix per seed: a constant pull in a random direction, a slow shared
//! sinusoid with a random per-axis profile, and a linear tether toward a
//! random nearby anchor. Magnitude bands are expressed as fractions of the
//! hover force `m g`, so the scenario scales with the vehicle.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::error::{Error, Result};
use crate::plant::DisturbanceSource;

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::NonFinite("band"));
        }
        if lo > hi {
            return Err(Error::Config(format!("empty band [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// Magnitude bands for the mixed scenario. Force magnitudes are fractions of
/// the hover force; the tether distance is in meters, the frequency in Hz.
///
/// The defaults put the combined pull at roughly 17-35 % of hover force,
/// split across a constant bias (5-12 %), a 0.2-0.4 Hz sinusoid (8-15 %),
/// and a tether whose pull at the setpoint is 4-8 %.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeScenario {
    /// Constant-bias magnitude over hover force.
    pub bias_frac: Band,
    /// Sinusoid amplitude-vector norm over hover force.
    pub sine_frac: Band,
    /// Sinusoid frequency, Hz.
    pub sine_freq_hz: Band,
    /// Tether anchor distance from the hover point, m.
    pub tether_distance: Band,
    /// Tether pull at the hover point over hover force.
    pub tether_frac: Band,
}

impl Default for CompositeScenario {
    fn default() -> Self {
        Self {
            bias_frac: Band { lo: 0.05, hi: 0.12 },
            sine_frac: Band { lo: 0.08, hi: 0.15 },
            sine_freq_hz: Band { lo: 0.2, hi: 0.4 },
            tether_distance: Band { lo: 0.2, hi: 0.5 },
            tether_frac: Band { lo: 0.04, hi: 0.08 },
        }
    }
}

impl CompositeScenario {
    pub fn validate(&self) -> Result<()> {
        for (name, band) in [
            ("bias_frac", self.bias_frac),
            ("sine_frac", self.sine_frac),
            ("sine_freq_hz", self.sine_freq_hz),
            ("tether_distance", self.tether_distance),
            ("tether_frac", self.tether_frac),
        ] {
            Band::new(band.lo, band.hi).map_err(|_| {
                Error::Config(format!("invalid {name} band [{}, {}]", band.lo, band.hi))
            })?;
            if band.lo < 0.0 {
                return Err(Error::Config(format!("{name} band must be nonnegative")));
            }
        }
        if self.tether_distance.lo <= 0.0 {
            return Err(Error::Config(
                "tether distance band must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// What disturbs the flyer in a batch: one fixed source shared by every
/// trial, or a fresh per-seed draw from the mixed scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceSpec {
    Fixed(DisturbanceSource),
    Scenario(CompositeScenario),
}

impl DisturbanceSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DisturbanceSpec::Fixed(src) => src.validate(),
            DisturbanceSpec::Scenario(sc) => sc.validate(),
        }
    }
}

fn unit_vector<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let v: [f64; 3] = UnitSphere.sample(rng);
    Vector3::from(v)
}

/// Materializes the disturbance for one trial.
///
/// The draw order below is fixed and part of the reproducibility contract:
/// a given `(spec, seed, hover, hover_force)` always yields the same source.
pub fn sample_disturbance(
    spec: &DisturbanceSpec,
    seed: u64,
    hover: &Vector3<f64>,
    hover_force: f64,
) -> Result<DisturbanceSource> {
    spec.validate()?;
    if !(hover_force.is_finite() && hover_force > 0.0) {
        return Err(Error::Config(format!(
            "hover force must be positive, got {hover_force}"
        )));
    }
    let sc = match spec {
        DisturbanceSpec::Fixed(src) => return Ok(src.clone()),
        DisturbanceSpec::Scenario(sc) => sc,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // 1. Constant bias: random direction, banded magnitude.
    let bias = unit_vector(&mut rng) * (sc.bias_frac.sample(&mut rng) * hover_force);

    // 2. Sinusoid: random signed per-axis profile normalized to a banded
    //    amplitude norm, one shared frequency and phase.
    let mut profile = Vector3::zeros();
    for k in 0..3 {
        let magnitude = rng.random_range(0.5..=1.0);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        profile[k] = sign * magnitude;
    }
    let amplitude = profile / profile.norm() * (sc.sine_frac.sample(&mut rng) * hover_force);
    let frequency_hz = sc.sine_freq_hz.sample(&mut rng);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);

    // 3. Tether: anchor at a banded distance in a random direction, with
    //    stiffness chosen so the pull at the hover point lands in-band.
    let distance = sc.tether_distance.sample(&mut rng);
    let anchor = hover + unit_vector(&mut rng) * distance;
    let stiffness = sc.tether_frac.sample(&mut rng) * hover_force / distance;

    let source = DisturbanceSource::Composite(vec![
        DisturbanceSource::ConstantBias(bias),
        DisturbanceSource::Sinusoid {
            amplitude,
            frequency_hz,
            phase,
        },
        DisturbanceSource::TetherSpring { anchor, stiffness },
    ]);
    source.validate()?;
    Ok(source)
}
