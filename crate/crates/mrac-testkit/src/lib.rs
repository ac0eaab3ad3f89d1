//! Brute-force reference implementations ("oracles") used by the test suites.
//!
//! Everything in this crate is deliberately written in the most literal way
//! possible — scalar loops, explicit sums, quadrature — so that agreement with
//! the production code is meaningful evidence rather than a tautology. None of
//! these functions share code with `mrac-core`.

use nalgebra::base::DMatrix;
use rand::Rng;

/// Gaussian feature vector computed term by term with scalar loops.
///
/// `phi_i = exp(-||x - c_i||^2 / (2 sigma_i^2))`, accumulating the squared
/// distance one coordinate at a time.
pub fn phi_scalar_loop(x: &[f64; 6], centers: &[[f64; 6]], sigmas: &[f64]) -> Vec<f64> {
    assert_eq!(centers.len(), sigmas.len());
    let mut out = Vec::with_capacity(centers.len());
    for (c, sigma) in centers.iter().zip(sigmas) {
        let mut dist2 = 0.0;
        for k in 0..6 {
            let diff = x[k] - c[k];
            dist2 += diff * diff;
        }
        out.push((-dist2 / (2.0 * sigma * sigma)).exp());
    }
    out
}

/// `W^T phi` computed with an explicit double loop over rows and columns.
pub fn force_double_loop(w_rows: &[[f64; 3]], phi: &[f64]) -> [f64; 3] {
    assert_eq!(w_rows.len(), phi.len());
    let mut out = [0.0; 3];
    for axis in 0..3 {
        for (row, p) in w_rows.iter().zip(phi) {
            out[axis] += row[axis] * p;
        }
    }
    out
}

/// Lyapunov value `z^T P z + (1/gamma) tr(Wt^T Wt)` as two expanded sums.
pub fn lyapunov_value_double_sum(
    z: &[f64; 9],
    p: &[[f64; 9]; 9],
    w_tilde_rows: &[[f64; 3]],
    gamma: f64,
) -> f64 {
    let mut quad = 0.0;
    for i in 0..9 {
        for j in 0..9 {
            quad += z[i] * p[i][j] * z[j];
        }
    }
    let mut frob2 = 0.0;
    for row in w_tilde_rows {
        for entry in row {
            frob2 += entry * entry;
        }
    }
    quad + frob2 / gamma
}

/// Per-axis RMS by the classic two-pass recipe: square, mean, root.
pub fn rms_two_pass(samples: &[[f64; 3]]) -> [f64; 3] {
    assert!(!samples.is_empty());
    let mut out = [0.0; 3];
    for axis in 0..3 {
        let mut squares = Vec::with_capacity(samples.len());
        for s in samples {
            squares.push(s[axis] * s[axis]);
        }
        let mean = squares.iter().sum::<f64>() / squares.len() as f64;
        out[axis] = mean.sqrt();
    }
    out
}

/// Matrix exponential by scaling-and-squaring with a long Taylor series.
///
/// Scales `A` by `2^-s` until its infinity norm is at most one half, sums the
/// Taylor series to order 20 (remainder below 1e-25 at that norm), then
/// squares the result `s` times.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2.0_f64.powi(s as i32);

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=20 {
        term = (&term * &scaled) / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Solution of `A^T P + P A = -Q` by quadrature of its integral representation
/// `P = \int_0^inf e^{A^T t} Q e^{A t} dt` (valid for Hurwitz `A`).
///
/// Composite Simpson rule on a horizon where the integrand has decayed below
/// roundoff, with the propagator advanced by a precomputed one-step exponential
/// and re-anchored from scratch every 512 steps to stop roundoff drift.
///
/// `abscissa` is the spectral abscissa of `A` (must be negative).
pub fn lyapunov_integral(a: &DMatrix<f64>, q: &DMatrix<f64>, abscissa: f64) -> DMatrix<f64> {
    assert!(abscissa < 0.0, "integral representation needs Hurwitz A");
    let n = a.nrows();
    let norm_a = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
    let horizon = 20.0 / abscissa.abs();
    // Step chosen so the Simpson error term (h ||A||)^4 / 180 is ~3.5e-8.
    let h = (1.0 / (20.0 * norm_a)).min(horizon / 2000.0);
    let mut steps = (horizon / h).ceil() as usize;
    if steps % 2 == 1 {
        steps += 1;
    }
    let h = horizon / steps as f64;

    let step_exp = expm(&(a * h));
    let mut propagator = DMatrix::<f64>::identity(n, n);
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for k in 0..=steps {
        if k > 0 {
            if k % 512 == 0 {
                propagator = expm(&(a * (h * k as f64)));
            } else {
                propagator = &propagator * &step_exp;
            }
        }
        let integrand = propagator.transpose() * q * &propagator;
        let weight = if k == 0 || k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += integrand * weight;
    }
    acc * (h / 3.0)
}

/// Composite Simpson quadrature of evenly spaced samples (odd count required).
pub fn simpson(values: &[f64], h: f64) -> f64 {
    assert!(
        values.len() >= 3 && values.len() % 2 == 1,
        "Simpson rule needs an odd number of samples, got {}",
        values.len()
    );
    let mut acc = values[0] + values[values.len() - 1];
    for (i, v) in values.iter().enumerate().skip(1).take(values.len() - 2) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

/// Eigenvalues via the real Schur form with a bounded iteration budget and a
/// deflation threshold slightly above machine epsilon. The stock
/// `complex_eigenvalues` uses machine epsilon with no iteration cap and can
/// spin forever on matrices with repeated eigenvalues; ~1e-13 relative
/// eigenvalue accuracy is far tighter than anything these oracles assert.
pub fn bounded_eigenvalues(a: &DMatrix<f64>) -> Vec<nalgebra::Complex<f64>> {
    for (eps, max_iter) in [(1e-13, 20_000), (1e-11, 50_000)] {
        if let Some(schur) = nalgebra::Schur::try_new(a.clone(), eps, max_iter) {
            return schur.complex_eigenvalues().iter().copied().collect();
        }
    }
    panic!(
        "eigenvalue iteration did not converge for a {}x{} matrix",
        a.nrows(),
        a.ncols()
    );
}

/// Largest real part over the eigenvalues of a square matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    bounded_eigenvalues(a)
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Random dense matrix shifted along the diagonal until its spectral abscissa
/// is exactly `-shift` (spectrum translation), giving a guaranteed-Hurwitz
/// test system with eigenvalues in a known band.
pub fn random_hurwitz<R: Rng>(rng: &mut R, n: usize, shift: f64) -> DMatrix<f64> {
    assert!(shift > 0.0);
    let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let alpha = spectral_abscissa(&m);
    let mut a = m;
    for i in 0..n {
        a[(i, i)] -= alpha + shift;
    }
    a
}

/// Random symmetric positive-definite matrix `R^T R + (0.1 + u) I`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let r = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut q = r.transpose() * &r;
    let bump = 0.1 + rng.random_range(0.0..1.0);
    for i in 0..n {
        q[(i, i)] += bump;
    }
    q
}

/// Closed-form modal response of one axis of the integral-action loop
/// `m e'' = -kp e - ki xi - kd e' - b`, `xi' = e`, written in the state
/// `[xi, e, e']`. Valid when the three closed-loop poles are real and
/// distinct, which the constructor asserts.
///
/// Initial condition: `xi(0) = 0`, `e(0) = e0`, `e'(0) = 0`.
pub struct BiasAxisResponse {
    poles: [f64; 3],
    coeffs: [f64; 3],
}

impl BiasAxisResponse {
    pub fn new(ki: f64, kp: f64, kd: f64, m: f64, bias: f64, e0: f64) -> Self {
        let companion = DMatrix::<f64>::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -ki / m, -kp / m, -kd / m],
        );
        let eigs = bounded_eigenvalues(&companion);
        let mut poles = [0.0; 3];
        for (i, e) in eigs.iter().enumerate() {
            assert!(
                e.im.abs() < 1e-9 * (1.0 + e.re.abs()),
                "oracle requires real poles, got {e}"
            );
            poles[i] = e.re;
        }
        poles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            poles[0] < poles[1] && poles[1] < poles[2],
            "oracle requires distinct poles, got {poles:?}"
        );

        // Modal expansion x(t) = x_ss + sum_i c_i [1, p_i, p_i^2] e^{p_i t};
        // match [xi, e, e'] at t = 0 against x_ss = [-b/ki, 0, 0].
        let vandermonde = DMatrix::<f64>::from_row_slice(
            3,
            3,
            &[
                1.0,
                1.0,
                1.0,
                poles[0],
                poles[1],
                poles[2],
                poles[0] * poles[0],
                poles[1] * poles[1],
                poles[2] * poles[2],
            ],
        );
        let rhs = nalgebra::base::DVector::from_column_slice(&[bias / ki, e0, 0.0]);
        let c = vandermonde
            .lu()
            .solve(&rhs)
            .expect("Vandermonde system with distinct poles is invertible");
        Self {
            poles,
            coeffs: [c[0], c[1], c[2]],
        }
    }

    /// Tracking error `e(t) = sum_i c_i p_i e^{p_i t}`.
    pub fn error_at(&self, t: f64) -> f64 {
        self.poles
            .iter()
            .zip(&self.coeffs)
            .map(|(p, c)| c * p * (p * t).exp())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::base::DVector;
    use rand::SeedableRng;

    #[test]
    fn expm_matches_scalar_exponential_on_diagonal_matrix() {
        let a = DMatrix::<f64>::from_diagonal(&DVector::from_column_slice(&[-1.0, 0.5, 2.0]));
        let e = expm(&a);
        for (i, lam) in [-1.0_f64, 0.5, 2.0].into_iter().enumerate() {
            assert!((e[(i, i)] - lam.exp()).abs() < 1e-14);
        }
        assert!(e[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn expm_reproduces_rotation_block() {
        // exp([[0, -w], [w, 0]] t) is a rotation by w t.
        let w = 1.3;
        let a = DMatrix::<f64>::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        let e = expm(&a);
        assert!((e[(0, 0)] - w.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - w.sin()).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_integral_solves_scalar_case() {
        // a = -2, q = 4 -> p = q / (2|a|) = 1.
        let a = DMatrix::<f64>::from_element(1, 1, -2.0);
        let q = DMatrix::<f64>::from_element(1, 1, 4.0);
        let p = lyapunov_integral(&a, &q, -2.0);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn random_hurwitz_has_requested_abscissa() {
        let mut rng = rand_pcg_like();
        for _ in 0..5 {
            let a = random_hurwitz(&mut rng, 6, 0.75);
            assert!((spectral_abscissa(&a) + 0.75).abs() < 1e-9);
        }
    }

    #[test]
    fn simpson_integrates_cubic_exactly() {
        let h = 0.1;
        let values: Vec<f64> = (0..=10).map(|k| (k as f64 * h).powi(3)).collect();
        assert!((simpson(&values, h) - 0.25_f64).abs() < 1e-14);
    }

    #[test]
    fn bias_response_settles_to_zero_error() {
        let resp = BiasAxisResponse::new(
            480.0 * 9.5e-5,
            188.0 * 9.5e-5,
            24.0 * 9.5e-5,
            9.5e-5,
            -2e-5,
            0.0,
        );
        assert!(resp.error_at(0.0).abs() < 1e-12);
        assert!(resp.error_at(10.0).abs() < 1e-12);
        // Transient actually moves.
        assert!(resp.error_at(0.2).abs() > 1e-5);
    }

    fn rand_pcg_like() -> impl rand::Rng {
        use rand::rngs::StdRng;
        StdRng::seed_from_u64(7)
    }
}
