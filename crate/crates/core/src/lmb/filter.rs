//! The LMB recursion: predict, associate, update, birth, prune, extract.

use super::cardinality::{cardinality_distribution, cardinality_mean};
use super::motion::ukf_predict;
use super::{
    FilterConfig, FilterError, Label, Measurement, StateMatrix, StateVector, TargetState, Track,
    MEAS_DIM, STATE_DIM,
};
use crate::geometry::wrap_angle;
use nalgebra::{Cholesky, Const, SMatrix, SVector};

type MeasVector = SVector<f64, MEAS_DIM>;
type MeasMatrix = SMatrix<f64, MEAS_DIM, MEAS_DIM>;

const LN_TAU: f64 = 1.8378770664093453; // ln(2 pi)

/// Cholesky with an escalating diagonal jitter fallback; innovation
/// covariances are positive definite in exact arithmetic but can lose that
/// numerically after long degenerate stretches.
fn spd_cholesky(s: &MeasMatrix) -> Result<Cholesky<f64, Const<MEAS_DIM>>, FilterError> {
    if let Some(chol) = Cholesky::new(*s) {
        return Ok(chol);
    }
    let scale = (0..MEAS_DIM).map(|i| s[(i, i)].abs()).fold(1.0f64, f64::max);
    for exp in [-9, -6, -3] {
        let jitter = 10f64.powi(exp) * scale;
        let jittered = s + MeasMatrix::identity() * jitter;
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(chol);
        }
    }
    Err(FilterError::Conditioning(
        "innovation covariance is not positive definite".into(),
    ))
}

#[derive(Debug, Clone)]
pub(crate) struct Posterior {
    pub mean: StateVector,
    pub cov: StateMatrix,
}

/// Marginal association probabilities for one measurement set.
#[derive(Debug, Clone)]
pub struct AssociationResult {
    /// `p_assoc[i][j]` is the probability that track `i` generated
    /// measurement `j`.
    pub p_assoc: Vec<Vec<f64>>,
    /// Per-measurement probability that no existing track explains it.
    pub p_unassoc: Vec<f64>,
    pub(crate) posteriors: Vec<Vec<Option<Posterior>>>,
}

/// The labeled multi-Bernoulli filter.
#[derive(Debug, Clone)]
pub struct LmbFilter {
    config: FilterConfig,
    tracks: Vec<Track>,
    frame: u64,
    birth_count: u64,
}

impl LmbFilter {
    pub fn new(config: FilterConfig) -> Result<Self, FilterError> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            frame: 0,
            birth_count: 0,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    /// All live Bernoulli components, confirmed or not.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Steps processed so far.
    pub fn frame(&self) -> u64 {
        self.frame
    }

    /// Cardinality pmf over the current components.
    pub fn cardinality(&self) -> Vec<f64> {
        let rs: Vec<f64> = self.tracks.iter().map(|t| t.existence).collect();
        cardinality_distribution(&rs).expect("existence probabilities are maintained in [0,1]")
    }

    /// Propagates every component `dt` seconds forward and decays existence
    /// by the survival probability.
    pub fn predict(&mut self, dt: f64) -> Result<(), FilterError> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(FilterError::Domain(format!("dt must be positive, got {dt}")));
        }
        let config = &self.config;
        for track in &mut self.tracks {
            let (mean, cov) = ukf_predict(&track.state.mean, &track.state.cov, dt, config)?;
            track.state = TargetState { mean, cov };
            track.existence = (track.existence * config.p_survival).clamp(0.0, 1.0);
            track.age += 1;
        }
        Ok(())
    }

    /// Computes marginal association probabilities between current components
    /// and the measurement set.
    ///
    /// Each gated same-class pair gets the Bernoulli weight
    /// `r * p_detect * likelihood`; per measurement the weights plus the
    /// clutter intensity normalize to one, the clutter share being the
    /// non-assignment probability. A measurement no component gates on is
    /// unexplained with probability one.
    pub fn associate(&self, measurements: &[Measurement]) -> Result<AssociationResult, FilterError> {
        let n = self.tracks.len();
        let m = measurements.len();
        let r_mat = MeasMatrix::from_diagonal(&MeasVector::from_column_slice(&self.config.r_diag));
        let mut weights = vec![vec![0.0f64; m]; n];
        let mut posteriors: Vec<Vec<Option<Posterior>>> = vec![vec![None; m]; n];

        for (i, track) in self.tracks.iter().enumerate() {
            let p = &track.state.cov;
            let s = p.fixed_view::<MEAS_DIM, MEAS_DIM>(0, 0) + r_mat;
            let chol = spd_cholesky(&s)?;
            let ln_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let s_inv = chol.inverse();
            // K = P H^T S^-1 with H = [I 0]: the first 7 columns of P
            let ph_t = p.fixed_view::<STATE_DIM, MEAS_DIM>(0, 0).into_owned();
            let gain = ph_t * s_inv;
            let mut kh = StateMatrix::zeros();
            kh.fixed_view_mut::<STATE_DIM, MEAS_DIM>(0, 0).copy_from(&gain);
            let i_kh = StateMatrix::identity() - kh;

            for (j, meas) in measurements.iter().enumerate() {
                if meas.class != track.class {
                    continue;
                }
                let mut nu = meas.z() - track.state.mean.fixed_rows::<MEAS_DIM>(0);
                nu[6] = wrap_angle(nu[6]);
                let d2 = nu.dot(&(s_inv * nu));
                if !d2.is_finite() || d2 > self.config.gate {
                    continue;
                }
                let likelihood = (-0.5 * (MEAS_DIM as f64 * LN_TAU + ln_det + d2)).exp();
                let mut mean = track.state.mean + gain * nu;
                mean[6] = wrap_angle(mean[6]);
                let cov = i_kh * p * i_kh.transpose() + gain * r_mat * gain.transpose();
                let cov = (cov + cov.transpose()) * 0.5;
                posteriors[i][j] = Some(Posterior { mean, cov });
                weights[i][j] = track.existence * self.config.p_detect * likelihood;
            }
        }

        let mut p_assoc = vec![vec![0.0f64; m]; n];
        let mut p_unassoc = vec![0.0f64; m];
        for j in 0..m {
            let total: f64 = (0..n).map(|i| weights[i][j]).sum::<f64>() + self.config.clutter_intensity;
            if total > 0.0 {
                for i in 0..n {
                    p_assoc[i][j] = weights[i][j] / total;
                }
                p_unassoc[j] = self.config.clutter_intensity / total;
            } else {
                p_unassoc[j] = 1.0;
            }
        }
        Ok(AssociationResult {
            p_assoc,
            p_unassoc,
            posteriors,
        })
    }

    /// Folds the association result into each component: the posterior is the
    /// moment-matched mixture of the missed-detection hypothesis and the
    /// per-measurement Kalman updates, and existence follows the same event
    /// weights with the missed term scaled by `1 - p_detect`.
    pub fn update(
        &mut self,
        measurements: &[Measurement],
        assoc: &AssociationResult,
    ) -> Result<(), FilterError> {
        if assoc.p_assoc.len() != self.tracks.len()
            || assoc.p_unassoc.len() != measurements.len()
        {
            return Err(FilterError::Domain(
                "association result does not match tracks and measurements".into(),
            ));
        }
        let p_detect = self.config.p_detect;
        for (i, track) in self.tracks.iter_mut().enumerate() {
            let row = &assoc.p_assoc[i];
            let assoc_mass: f64 = row.iter().sum();
            // a component can nominally explain more than unit mass when
            // several measurements each assign it most of their probability;
            // rescale so the event weights stay a distribution
            let scale = if assoc_mass > 1.0 { 1.0 / assoc_mass } else { 1.0 };
            let beta_miss = (1.0 - assoc_mass * scale).max(0.0);
            let r = track.existence;
            let denom = 1.0 - r * p_detect;
            let r_miss = if denom > 1e-12 {
                r * (1.0 - p_detect) / denom
            } else {
                0.0
            };
            let r_new = (beta_miss * r_miss + assoc_mass * scale).clamp(0.0, 1.0);

            // mixture over "exists and missed" plus "exists and generated j"
            let mut weights = vec![beta_miss * r_miss];
            let mut comps: Vec<&Posterior> = Vec::new();
            for (j, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    let post = assoc.posteriors[i][j]
                        .as_ref()
                        .expect("positive association implies a gated posterior");
                    weights.push(p * scale);
                    comps.push(post);
                }
            }
            let total: f64 = weights.iter().sum();
            if total > 1e-12 {
                let inv = 1.0 / total;
                let miss_state = (track.state.mean, track.state.cov);
                let means = std::iter::once(&miss_state.0).chain(comps.iter().map(|c| &c.mean));
                let (mut sin_sum, mut cos_sum) = (0.0, 0.0);
                let mut mean = StateVector::zeros();
                for (w, m) in weights.iter().zip(means.clone()) {
                    let w = w * inv;
                    mean += w * m;
                    sin_sum += w * m[6].sin();
                    cos_sum += w * m[6].cos();
                }
                mean[6] = sin_sum.atan2(cos_sum);
                for k in 3..6 {
                    mean[k] = mean[k].max(1e-3);
                }
                let covs = std::iter::once(&miss_state.1).chain(comps.iter().map(|c| &c.cov));
                let mut cov = StateMatrix::zeros();
                for ((w, m), c) in weights.iter().zip(means).zip(covs) {
                    let w = w * inv;
                    let mut delta = m - mean;
                    delta[6] = wrap_angle(m[6] - mean[6]);
                    cov += w * (c + delta * delta.transpose());
                }
                let cov = (cov + cov.transpose()) * 0.5;
                track.state = TargetState { mean, cov };
                track.state.validate()?;
            }
            track.existence = r_new;
        }
        Ok(())
    }

    /// Births a tentative component on every measurement whose
    /// non-assignment probability exceeds the birth threshold.
    pub fn birth(&mut self, measurements: &[Measurement], assoc: &AssociationResult) {
        for (j, meas) in measurements.iter().enumerate() {
            if assoc.p_unassoc[j] <= self.config.birth_threshold {
                continue;
            }
            let mut mean = StateVector::zeros();
            mean.fixed_rows_mut::<MEAS_DIM>(0).copy_from(&meas.z());
            let mut cov = StateMatrix::zeros();
            for (k, v) in self.config.birth_cov_diag.iter().enumerate() {
                cov[(k, k)] = *v;
            }
            self.tracks.push(Track {
                label: Label {
                    frame: self.frame,
                    index: self.birth_count,
                },
                existence: self.config.r_birth,
                class: meas.class.clone(),
                age: 0,
                state: TargetState { mean, cov },
            });
            self.birth_count += 1;
        }
    }

    /// Drops components whose existence fell below the configured floor.
    pub fn prune(&mut self) {
        let floor = self.config.r_prune;
        self.tracks.retain(|t| t.existence >= floor);
    }

    /// Extracts the most likely track set: the mean of the cardinality
    /// distribution, rounded, picks how many components to return, highest
    /// existence first with ties to the older label.
    pub fn extract(&self) -> Vec<Track> {
        let pmf = self.cardinality();
        let count = cardinality_mean(&pmf).round() as usize;
        let mut order: Vec<&Track> = self.tracks.iter().collect();
        order.sort_by(|a, b| {
            b.existence
                .partial_cmp(&a.existence)
                .expect("existence probabilities are finite")
                .then_with(|| a.label.cmp(&b.label))
        });
        order
            .into_iter()
            .take(count.min(self.tracks.len()))
            .cloned()
            .collect()
    }

    /// One full recursion: predict, associate, update, birth, prune, then
    /// extract. Deterministic given inputs and config.
    pub fn step(
        &mut self,
        measurements: &[Measurement],
        dt: f64,
    ) -> Result<Vec<Track>, FilterError> {
        self.predict(dt)?;
        let assoc = self.associate(measurements)?;
        self.update(measurements, &assoc)?;
        self.birth(measurements, &assoc);
        self.prune();
        self.frame += 1;
        Ok(self.extract())
    }
}
