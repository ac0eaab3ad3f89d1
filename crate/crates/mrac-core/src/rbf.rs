//! Gaussian radial-basis-function features and the linear-in-parameters force
//! model built on them.
//!
//! A network is a fixed set of kernel centers `c_i` in the 6-dimensional state
//! space `x = [r, v]` with per-kernel bandwidths `sigma_i`. Features are
//! `phi_i(x) = exp(-||x - c_i||^2 / (2 sigma_i^2))`, and a weight matrix `W`
//! (n x 3) turns features into a force `W^T phi(x)` in newtons. The same
//! machinery serves both the simulated "true" disturbance and the controller's
//! adaptive compensator.

use nalgebra::{DVector, Dyn, OMatrix, SVector, Vector3, U3};

use crate::error::{Error, Result};

/// State-space dimension the kernels live in (position plus velocity).
pub const STATE_DIM: usize = 6;

/// A fixed Gaussian RBF feature basis: kernel centers and bandwidths.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfNetwork {
    centers: Vec<SVector<f64, STATE_DIM>>,
    bandwidths: Vec<f64>,
}

impl RbfNetwork {
    /// Builds a network from explicit centers and per-kernel bandwidths.
    ///
    /// Rejects empty networks, mismatched lengths, non-finite or duplicate
    /// centers, and non-positive bandwidths.
    pub fn new(centers: Vec<SVector<f64, STATE_DIM>>, bandwidths: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config("network needs at least one kernel".into()));
        }
        if centers.len() != bandwidths.len() {
            return Err(Error::Shape(format!(
                "{} centers but {} bandwidths",
                centers.len(),
                bandwidths.len()
            )));
        }
        for c in &centers {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("kernel center"));
            }
        }
        for &s in &bandwidths {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!(
                    "bandwidth must be positive, got {s}"
                )));
            }
        }
        for i in 0..centers.len() {
            for j in (i + 1)..centers.len() {
                if centers[i] == centers[j] {
                    return Err(Error::Config(format!(
                        "kernels {i} and {j} share the same center"
                    )));
                }
            }
        }
        Ok(Self {
            centers,
            bandwidths,
        })
    }

    /// Number of kernels.
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least one kernel
    }

    pub fn centers(&self) -> &[SVector<f64, STATE_DIM>] {
        &self.centers
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }
}

/// An n x 3 matrix of force weights: one row per kernel, one column per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: OMatrix<f64, Dyn, U3>,
}

impl WeightMatrix {
    /// Wraps a matrix of weights, rejecting non-finite entries.
    pub fn new(entries: OMatrix<f64, Dyn, U3>) -> Result<Self> {
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("weight matrix"));
        }
        Ok(Self { entries })
    }

    /// All-zero weights for an `n`-kernel network.
    pub fn zeros(n: usize) -> Self {
        Self {
            entries: OMatrix::<f64, Dyn, U3>::zeros(n),
        }
    }

    /// Builds from per-kernel rows.
    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        let entries = OMatrix::<f64, Dyn, U3>::from_fn(rows.len(), |i, j| rows[i][j]);
        Self::new(entries)
    }

    /// Number of kernel rows.
    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &OMatrix<f64, Dyn, U3> {
        &self.entries
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }
}

/// Evaluates the Gaussian feature vector `phi(x)`.
///
/// Every component lies in `(0, 1]`, reaching 1 exactly at the kernel center.
pub fn eval_phi(x: &SVector<f64, STATE_DIM>, net: &RbfNetwork) -> Result<DVector<f64>> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("feature input x"));
    }
    let mut phi = DVector::<f64>::zeros(net.len());
    for (i, (c, s)) in net.centers.iter().zip(&net.bandwidths).enumerate() {
        let dist2 = (x - c).norm_squared();
        phi[i] = (-dist2 / (2.0 * s * s)).exp();
    }
    Ok(phi)
}

/// Evaluates the linear-in-parameters force `W^T phi` (newtons).
pub fn eval_force(weights: &WeightMatrix, phi: &DVector<f64>) -> Result<Vector3<f64>> {
    if weights.nrows() != phi.len() {
        return Err(Error::Shape(format!(
            "weight matrix has {} rows but phi has {} components",
            weights.nrows(),
            phi.len()
        )));
    }
    Ok(weights.entries.tr_mul(phi))
}

/// Places kernel centers on a regular grid over the box `[state_lo, state_hi]`
/// and gives every kernel the bandwidth `sigma_scale x (largest per-axis grid
/// spacing)`.
///
/// Axes with a single count collapse to the box midpoint; axes with `k > 1`
/// counts span the box inclusively. Enumeration order is fixed with axis 1
/// fastest, so a given box and counts always produce the same network.
/// If every axis collapses (all counts 1) the bandwidth falls back to the
/// largest box width, keeping it positive.
pub fn build_grid_network(
    state_lo: &SVector<f64, STATE_DIM>,
    state_hi: &SVector<f64, STATE_DIM>,
    counts: [usize; STATE_DIM],
    sigma_scale: f64,
) -> Result<RbfNetwork> {
    if !(state_lo.iter().all(|v| v.is_finite()) && state_hi.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("grid box"));
    }
    for k in 0..STATE_DIM {
        if state_lo[k] >= state_hi[k] {
            return Err(Error::Config(format!(
                "grid box is empty on axis {}: [{}, {}]",
                k + 1,
                state_lo[k],
                state_hi[k]
            )));
        }
        if counts[k] == 0 {
            return Err(Error::Config(format!(
                "zero kernel count on axis {}",
                k + 1
            )));
        }
    }
    if !(sigma_scale.is_finite() && sigma_scale > 0.0) {
        return Err(Error::Config(format!(
            "sigma_scale must be positive, got {sigma_scale}"
        )));
    }

    let n: usize = counts.iter().product();
    let mut spacing_max = 0.0_f64;
    for k in 0..STATE_DIM {
        if counts[k] > 1 {
            spacing_max = spacing_max.max((state_hi[k] - state_lo[k]) / (counts[k] - 1) as f64);
        }
    }
    if spacing_max == 0.0 {
        spacing_max = (state_hi - state_lo).max();
    }

    let mut centers = Vec::with_capacity(n);
    for idx in 0..n {
        let mut rem = idx;
        let mut c = SVector::<f64, STATE_DIM>::zeros();
        for k in 0..STATE_DIM {
            let i = rem % counts[k];
            rem /= counts[k];
            c[k] = if counts[k] == 1 {
                0.5 * (state_lo[k] + state_hi[k])
            } else {
                state_lo[k] + i as f64 * (state_hi[k] - state_lo[k]) / (counts[k] - 1) as f64
            };
        }
        centers.push(c);
    }
    RbfNetwork::new(centers, vec![sigma_scale * spacing_max; n])
}
