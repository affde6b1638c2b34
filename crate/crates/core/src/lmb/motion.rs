//! Coordinated-turn dynamics and the unscented prediction step.
//!
//! The process model holds speed and yaw rate piecewise constant, so targets
//! trace circular arcs (straight lines in the zero-turn-rate limit). Process
//! noise enters as white accelerations on speed and yaw rate, mapped into
//! the state through an augmented unscented transform.

use super::{FilterConfig, FilterError};
use crate::geometry::wrap_angle;
use nalgebra::{SMatrix, SVector};

pub const STATE_DIM: usize = 9;
pub const MEAS_DIM: usize = 7;
const AUG_DIM: usize = STATE_DIM + 2;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
type AugVector = SVector<f64, AUG_DIM>;
type AugMatrix = SMatrix<f64, AUG_DIM, AUG_DIM>;

/// State component indices.
pub const IDX_YAW: usize = 6;
pub const IDX_SPEED: usize = 7;
pub const IDX_YAW_RATE: usize = 8;

/// Propagates one state through the coordinated-turn arc over `dt` seconds.
///
/// Below a turn rate of 1e-6 rad/s the arc degenerates to its straight-line
/// limit, which keeps the map continuous there.
pub fn ct_transition(state: &StateVector, dt: f64) -> StateVector {
    let mut out = *state;
    let yaw = state[IDX_YAW];
    let v = state[IDX_SPEED];
    let omega = state[IDX_YAW_RATE];
    if omega.abs() < 1e-6 {
        out[0] += v * dt * yaw.cos();
        out[1] += v * dt * yaw.sin();
    } else {
        let yaw_next = yaw + omega * dt;
        out[0] += v / omega * (yaw_next.sin() - yaw.sin());
        out[1] += v / omega * (-yaw_next.cos() + yaw.cos());
    }
    out[IDX_YAW] = wrap_angle(yaw + omega * dt);
    out
}

/// Lower-triangular square root of a positive semidefinite matrix.
///
/// A plain Cholesky rejects singular matrices, but degenerate covariances
/// (exactly known components) are legitimate here: a zero pivot simply
/// zeroes its column. Indefinite input is an error.
pub(crate) fn psd_sqrt<const N: usize>(
    m: &SMatrix<f64, N, N>,
) -> Result<SMatrix<f64, N, N>, FilterError> {
    let scale = (0..N).map(|i| m[(i, i)].abs()).fold(1.0f64, f64::max);
    let tol = 1e-12 * scale;
    let mut l = SMatrix::<f64, N, N>::zeros();
    for j in 0..N {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return Err(FilterError::Conditioning(format!(
                "matrix is indefinite at pivot {j} ({d:.3e})"
            )));
        }
        if d <= tol {
            continue;
        }
        l[(j, j)] = d.sqrt();
        for i in j + 1..N {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / l[(j, j)];
        }
    }
    Ok(l)
}

fn propagate_aug(chi: &AugVector, dt: f64) -> StateVector {
    let state: StateVector = chi.fixed_rows::<STATE_DIM>(0).into_owned();
    let accel = chi[STATE_DIM];
    let alpha = chi[STATE_DIM + 1];
    let yaw = state[IDX_YAW];
    let mut out = ct_transition(&state, dt);
    // noise-input mapping: acceleration along the pre-step heading, yaw
    // acceleration on the turn
    let half_dt2 = 0.5 * dt * dt;
    out[0] += half_dt2 * yaw.cos() * accel;
    out[1] += half_dt2 * yaw.sin() * accel;
    out[IDX_YAW] = wrap_angle(out[IDX_YAW] + half_dt2 * alpha);
    out[IDX_SPEED] += dt * accel;
    out[IDX_YAW_RATE] += dt * alpha;
    out
}

/// Unscented prediction of a Gaussian state through the coordinated-turn
/// model with additive-through-dynamics process noise.
///
/// The state is augmented with the two noise inputs; sigma points follow the
/// scaled unscented transform with the spread parameters from `config`. The
/// yaw mean is circular (resultant direction of the weighted headings) and
/// yaw residuals are wrapped. A small diffusion floor on z and the sizes
/// keeps those otherwise static components alive.
pub fn ukf_predict(
    mean: &StateVector,
    cov: &StateMatrix,
    dt: f64,
    config: &FilterConfig,
) -> Result<(StateVector, StateMatrix), FilterError> {
    let n = AUG_DIM as f64;
    let lambda = config.ut_alpha * config.ut_alpha * (n + config.ut_kappa) - n;
    let spread = n + lambda;
    if spread <= 0.0 {
        return Err(FilterError::InvalidConfig(
            "unscented spread alpha^2 (n + kappa) must be positive".into(),
        ));
    }

    let mut aug_mean = AugVector::zeros();
    aug_mean.fixed_rows_mut::<STATE_DIM>(0).copy_from(mean);
    let mut aug_cov = AugMatrix::zeros();
    aug_cov
        .fixed_view_mut::<STATE_DIM, STATE_DIM>(0, 0)
        .copy_from(cov);
    aug_cov[(STATE_DIM, STATE_DIM)] = config.sigma_a * config.sigma_a;
    aug_cov[(STATE_DIM + 1, STATE_DIM + 1)] = config.sigma_alpha * config.sigma_alpha;

    let root = match psd_sqrt(&aug_cov) {
        Ok(r) => r,
        Err(_) => {
            // documented jitter fallback: inflate the state block slightly
            // and retry before giving up
            let mut jittered = aug_cov;
            let scale = (0..AUG_DIM)
                .map(|i| aug_cov[(i, i)].abs())
                .fold(1.0f64, f64::max);
            for i in 0..STATE_DIM {
                jittered[(i, i)] += 1e-9 * scale;
            }
            psd_sqrt(&jittered)?
        }
    };
    let gamma = spread.sqrt();

    let w_mean0 = lambda / spread;
    let w_cov0 = w_mean0 + (1.0 - config.ut_alpha * config.ut_alpha + config.ut_beta);
    let w_i = 0.5 / spread;

    let mut sigma = Vec::with_capacity(2 * AUG_DIM + 1);
    sigma.push(aug_mean);
    for i in 0..AUG_DIM {
        let offset = gamma * root.column(i);
        sigma.push(aug_mean + offset);
        sigma.push(aug_mean - offset);
    }
    let propagated: Vec<StateVector> = sigma.iter().map(|chi| propagate_aug(chi, dt)).collect();
    let weight_of = |k: usize| if k == 0 { w_mean0 } else { w_i };

    let mut pred_mean = StateVector::zeros();
    let (mut sin_sum, mut cos_sum) = (0.0, 0.0);
    for (k, y) in propagated.iter().enumerate() {
        let w = weight_of(k);
        pred_mean += w * y;
        sin_sum += w * y[IDX_YAW].sin();
        cos_sum += w * y[IDX_YAW].cos();
    }
    pred_mean[IDX_YAW] = sin_sum.atan2(cos_sum);

    let mut pred_cov = StateMatrix::zeros();
    for (k, y) in propagated.iter().enumerate() {
        let w = if k == 0 { w_cov0 } else { w_i };
        let mut delta = y - pred_mean;
        delta[IDX_YAW] = wrap_angle(y[IDX_YAW] - pred_mean[IDX_YAW]);
        pred_cov += w * delta * delta.transpose();
    }
    let floor = config.floor_noise_std * config.floor_noise_std;
    for i in 2..6 {
        pred_cov[(i, i)] += floor;
    }
    pred_cov = (pred_cov + pred_cov.transpose()) * 0.5;

    if pred_mean.iter().any(|v| !v.is_finite()) || pred_cov.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::Conditioning(
            "prediction produced non-finite moments".into(),
        ));
    }
    Ok((pred_mean, pred_cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn state(x: f64, y: f64, yaw: f64, v: f64, omega: f64) -> StateVector {
        StateVector::from_column_slice(&[x, y, 0.0, 4.0, 2.0, 1.5, yaw, v, omega])
    }

    /// RK4 integration of the planar CT ODE, small steps.
    fn rk4_ct(state: &StateVector, dt: f64, steps: usize) -> StateVector {
        let h = dt / steps as f64;
        let mut x = state[0];
        let mut y = state[1];
        let mut yaw = state[IDX_YAW];
        let v = state[IDX_SPEED];
        let omega = state[IDX_YAW_RATE];
        let deriv = |yaw: f64| (v * yaw.cos(), v * yaw.sin(), omega);
        for _ in 0..steps {
            let (k1x, k1y, k1t) = deriv(yaw);
            let (k2x, k2y, k2t) = deriv(yaw + 0.5 * h * k1t);
            let (k3x, k3y, k3t) = deriv(yaw + 0.5 * h * k2t);
            let (k4x, k4y, k4t) = deriv(yaw + h * k3t);
            x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
            yaw += h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        }
        let mut out = *state;
        out[0] = x;
        out[1] = y;
        out[IDX_YAW] = wrap_angle(yaw);
        out
    }

    #[test]
    fn straight_line_motion() {
        let s = state(0.0, 0.0, 0.0, 10.0, 0.0);
        let next = ct_transition(&s, 0.1);
        assert_relative_eq!(next[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(next[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(next[IDX_YAW], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quarter_circle_arc() {
        // v = r * omega with r = 10 m: after the heading sweeps pi/2 the
        // displacement is (r, r) from a pose starting at the origin heading +x
        let omega = 1.0;
        let s = state(0.0, 0.0, 0.0, 10.0, omega);
        let next = ct_transition(&s, std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(next[0], 10.0, epsilon = 1e-9);
        assert_relative_eq!(next[1], 10.0, epsilon = 1e-9);
        assert_relative_eq!(next[IDX_YAW], std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn arc_matches_rk4_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let s = state(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-3.1..3.1),
                rng.random_range(0.0..30.0),
                rng.random_range(-1.5..1.5),
            );
            let exact = ct_transition(&s, 0.1);
            let numeric = rk4_ct(&s, 0.1, 64);
            assert!((exact[0] - numeric[0]).abs() < 1e-3);
            assert!((exact[1] - numeric[1]).abs() < 1e-3);
            assert!(wrap_angle(exact[IDX_YAW] - numeric[IDX_YAW]).abs() < 1e-4);
        }
    }

    #[test]
    fn transition_is_continuous_at_zero_turn_rate() {
        let near = ct_transition(&state(0.0, 0.0, 0.7, 12.0, 1e-7), 0.1);
        let zero = ct_transition(&state(0.0, 0.0, 0.7, 12.0, 0.0), 0.1);
        for i in 0..STATE_DIM {
            assert!((near[i] - zero[i]).abs() < 1e-6, "component {i}");
        }
    }

    #[test]
    fn psd_sqrt_reconstructs_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = SMatrix::<f64, 5, 5>::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let m = a * a.transpose() + SMatrix::<f64, 5, 5>::identity() * 0.1;
            let l = psd_sqrt(&m).unwrap();
            assert_relative_eq!(l * l.transpose(), m, epsilon = 1e-9);
        }
    }

    #[test]
    fn psd_sqrt_handles_singular_and_rejects_indefinite() {
        let mut m = SMatrix::<f64, 3, 3>::zeros();
        m[(0, 0)] = 4.0;
        let l = psd_sqrt(&m).unwrap();
        assert_relative_eq!(l * l.transpose(), m, epsilon = 1e-12);
        assert!(psd_sqrt(&SMatrix::<f64, 2, 2>::new(1.0, 0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn degenerate_prediction_reproduces_the_deterministic_arc() {
        // zero covariance and zero process noise: every sigma point
        // coincides, the prediction is the arc itself
        let mut config = FilterConfig::default();
        config.sigma_a = 0.0;
        config.sigma_alpha = 0.0;
        config.floor_noise_std = 0.0;
        let mean = state(3.0, -2.0, 0.9, 8.0, 0.6);
        let (pred, cov) = ukf_predict(&mean, &StateMatrix::zeros(), 0.1, &config).unwrap();
        let arc = ct_transition(&mean, 0.1);
        for i in 0..STATE_DIM {
            assert!((pred[i] - arc[i]).abs() < 1e-9, "component {i}");
        }
        assert!(cov.abs().max() < 1e-9);
    }

    #[test]
    fn zero_turn_rate_matches_linear_kalman_prediction() {
        // with yaw and yaw-rate exactly known the dynamics are linear in the
        // remaining components, so the unscented result must equal the
        // closed-form linear prediction
        let dt = 0.1;
        let mut config = FilterConfig::default();
        config.floor_noise_std = 0.0;
        let yaw = 0.35f64;
        let mean = state(1.0, -4.0, yaw, 9.0, 0.0);
        let mut cov = StateMatrix::zeros();
        for (i, v) in [1.2, 0.8, 0.3, 0.2, 0.2, 0.1, 0.0, 2.5, 0.0].iter().enumerate() {
            cov[(i, i)] = *v;
        }
        cov[(0, 7)] = 0.4;
        cov[(7, 0)] = 0.4;

        let mut f = StateMatrix::identity();
        f[(0, IDX_SPEED)] = dt * yaw.cos();
        f[(1, IDX_SPEED)] = dt * yaw.sin();
        let mut g = SMatrix::<f64, 9, 2>::zeros();
        g[(0, 0)] = 0.5 * dt * dt * yaw.cos();
        g[(1, 0)] = 0.5 * dt * dt * yaw.sin();
        g[(IDX_YAW, 1)] = 0.5 * dt * dt;
        g[(IDX_SPEED, 0)] = dt;
        g[(IDX_YAW_RATE, 1)] = dt;
        let q = SMatrix::<f64, 2, 2>::new(
            config.sigma_a * config.sigma_a,
            0.0,
            0.0,
            config.sigma_alpha * config.sigma_alpha,
        );
        let expect_mean = f * mean;
        let expect_cov = f * cov * f.transpose() + g * q * g.transpose();

        let (pred, pcov) = ukf_predict(&mean, &cov, dt, &config).unwrap();
        for i in 0..STATE_DIM {
            assert!((pred[i] - expect_mean[i]).abs() < 1e-6, "mean component {i}");
            for j in 0..STATE_DIM {
                assert!(
                    (pcov[(i, j)] - expect_cov[(i, j)]).abs() < 1e-6,
                    "cov ({i},{j}): {} vs {}",
                    pcov[(i, j)],
                    expect_cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn prediction_moments_match_monte_carlo() {
        let dt = 0.1;
        let mut config = FilterConfig::default();
        config.sigma_a = 2.0;
        config.sigma_alpha = 0.4;
        config.floor_noise_std = 0.0;
        let mean = state(5.0, 1.0, 0.5, 10.0, 0.6);
        let sds = [0.4, 0.4, 0.1, 0.05, 0.05, 0.05, 0.05, 0.8, 0.08];
        let mut cov = StateMatrix::zeros();
        for (i, sd) in sds.iter().enumerate() {
            cov[(i, i)] = sd * sd;
        }
        let (pred, pcov) = ukf_predict(&mean, &cov, dt, &config).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 200_000;
        let mut sum = StateVector::zeros();
        let mut samples = Vec::with_capacity(n);
        let accel_dist = Normal::new(0.0, config.sigma_a).unwrap();
        let alpha_dist = Normal::new(0.0, config.sigma_alpha).unwrap();
        for _ in 0..n {
            let mut chi = AugVector::zeros();
            for (i, sd) in sds.iter().enumerate() {
                chi[i] = mean[i] + Normal::new(0.0, *sd).unwrap().sample(&mut rng);
            }
            chi[STATE_DIM] = accel_dist.sample(&mut rng);
            chi[STATE_DIM + 1] = alpha_dist.sample(&mut rng);
            let y = propagate_aug(&chi, dt);
            sum += y;
            samples.push(y);
        }
        let mc_mean = sum / n as f64;
        for i in [0, 1, IDX_SPEED, IDX_YAW_RATE] {
            assert!(
                (pred[i] - mc_mean[i]).abs() < 0.02,
                "mean component {i}: {} vs {}",
                pred[i],
                mc_mean[i]
            );
        }
        // spot-check the dominant variances
        for i in [0, 1, IDX_SPEED] {
            let var: f64 = samples
                .iter()
                .map(|s| (s[i] - mc_mean[i]).powi(2))
                .sum::<f64>()
                / n as f64;
            let rel = (pcov[(i, i)] - var).abs() / var;
            assert!(
                rel < 0.05,
                "variance component {i}: {} vs {}",
                pcov[(i, i)],
                var
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prediction_keeps_moments_finite_and_symmetric(
            x in -50.0..50.0f64,
            yaw in -3.1..3.1f64,
            v in 0.0..30.0f64,
            omega in -1.5..1.5f64,
            scale in 0.01..2.0f64,
        ) {
            let mean = state(x, -x, yaw, v, omega);
            let cov = StateMatrix::identity() * scale;
            let (m, p) = ukf_predict(&mean, &cov, 0.1, &FilterConfig::default()).unwrap();
            prop_assert!(m.iter().all(|v| v.is_finite()));
            prop_assert!((p - p.transpose()).abs().max() < 1e-12);
            prop_assert!(psd_sqrt(&p).is_ok());
            prop_assert!(m[IDX_YAW] > -std::f64::consts::PI - 1e-9);
            prop_assert!(m[IDX_YAW] <= std::f64::consts::PI + 1e-9);
        }
    }
}
