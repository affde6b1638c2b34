//! Synthetic multi-target scenarios: ground-truth trajectories under the
//! coordinated-turn model plus noisy detection streams with missed
//! detections and clutter.
//!
//! Randomness comes from ChaCha8, a portable counter-based generator, so a
//! seed reproduces the same scenario on every platform. Truth and
//! measurement rendering use two independent streams derived from the
//! configured seed; regenerating measurements never perturbs the truth.

use crate::geometry::{wrap_angle, OrientedBox3D};
use crate::lmb::{ct_transition, Measurement, StateVector};
use crate::metrics::{Annotation, FrameAnnotations};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Salt xored into the seed for the measurement stream.
const MEASUREMENT_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    Config(String),
}

/// Plausible size ranges for one object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub length: [f64; 2],
    pub width: [f64; 2],
    pub height: [f64; 2],
}

impl ClassSpec {
    pub fn car() -> Self {
        Self {
            name: "Car".into(),
            length: [3.5, 5.0],
            width: [1.6, 2.0],
            height: [1.4, 1.8],
        }
    }
}

/// Frames `[birth, death)` during which a target exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpawnWindow {
    pub birth: usize,
    pub death: usize,
}

/// Full description of a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub num_targets: usize,
    /// Frames to simulate.
    pub duration: usize,
    pub dt: f64,
    pub roi_min: [f64; 3],
    pub roi_max: [f64; 3],
    /// Diagonal of the measurement noise covariance.
    pub r_diag: [f64; 7],
    pub p_detect: f64,
    /// Expected clutter boxes per frame.
    pub clutter_rate: f64,
    pub seed: u64,
    pub speed_range: [f64; 2],
    pub turn_rate_range: [f64; 2],
    /// Frames between redraws of (speed, turn rate).
    pub segment_frames: [usize; 2],
    pub classes: Vec<ClassSpec>,
    /// Per-target lifetimes; empty means all targets live the whole run.
    pub spawns: Vec<SpawnWindow>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_targets: 5,
            duration: 100,
            dt: 0.1,
            roi_min: [0.0, -40.0, -2.73],
            roi_max: [60.0, 40.0, 1.27],
            r_diag: [0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.01],
            p_detect: 0.9,
            clutter_rate: 10.0,
            seed: 0,
            speed_range: [2.0, 6.0],
            turn_rate_range: [-0.4, 0.4],
            segment_frames: [20, 50],
            classes: vec![ClassSpec::car()],
            spawns: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        for i in 0..3 {
            if !self.roi_min[i].is_finite()
                || !self.roi_max[i].is_finite()
                || self.roi_max[i] <= self.roi_min[i]
            {
                return fail(format!("ROI axis {i} is empty or non-finite"));
            }
        }
        if self.r_diag.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return fail("r_diag entries must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.p_detect) {
            return fail(format!("p_detect {} outside [0,1]", self.p_detect));
        }
        if !self.clutter_rate.is_finite() || self.clutter_rate < 0.0 {
            return fail("clutter_rate must be nonnegative".into());
        }
        for r in [&self.speed_range, &self.turn_rate_range] {
            if !r[0].is_finite() || !r[1].is_finite() || r[0] > r[1] {
                return fail(format!("range [{}, {}] is invalid", r[0], r[1]));
            }
        }
        if self.speed_range[0] < 0.0 {
            return fail("speeds must be nonnegative".into());
        }
        if self.segment_frames[0] == 0 || self.segment_frames[0] > self.segment_frames[1] {
            return fail("segment_frames must be a nonempty range of positive counts".into());
        }
        if self.classes.is_empty() {
            return fail("at least one class spec is required".into());
        }
        for c in &self.classes {
            for (axis, r) in [("length", c.length), ("width", c.width), ("height", c.height)] {
                if !(r[0] > 0.0) || !(r[1] >= r[0]) || !r[0].is_finite() || !r[1].is_finite() {
                    return fail(format!("class {} has invalid {axis} range", c.name));
                }
            }
        }
        if !self.spawns.is_empty() {
            if self.spawns.len() != self.num_targets {
                return fail(format!(
                    "{} spawn windows for {} targets",
                    self.spawns.len(),
                    self.num_targets
                ));
            }
            for (t, w) in self.spawns.iter().enumerate() {
                if w.birth >= w.death || w.death > self.duration {
                    return fail(format!(
                        "spawn window [{}, {}) of target {t} is invalid for duration {}",
                        w.birth, w.death, self.duration
                    ));
                }
            }
        }
        if self.num_targets > 0 {
            let margin = self.max_margin();
            for i in 0..2 {
                if self.roi_max[i] - self.roi_min[i] <= 2.0 * margin {
                    return fail(format!(
                        "ROI axis {i} too small for targets needing a {margin:.2} m margin"
                    ));
                }
            }
            let max_h = self
                .classes
                .iter()
                .map(|c| c.height[1])
                .fold(0.0f64, f64::max);
            if self.roi_max[2] - self.roi_min[2] <= max_h {
                return fail("ROI too shallow for the tallest class".into());
            }
        }
        Ok(())
    }

    /// Worst-case half-diagonal of any class footprint, plus slack.
    fn max_margin(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| (c.length[1].powi(2) + c.width[1].powi(2)).sqrt() / 2.0)
            .fold(0.0f64, f64::max)
            + 0.1
    }
}

/// Ground truth plus rendered detections.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub truth: Vec<FrameAnnotations>,
    pub measurements: Vec<Vec<Measurement>>,
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// Simulates the ground-truth trajectories.
///
/// Each target draws a class, size and near-ground pose, then follows the
/// coordinated-turn model with piecewise-constant speed and turn rate.
/// Trajectories reflect off the margin-shrunk ROI walls so every truth box
/// stays inside the ROI for its whole lifetime.
pub fn generate_truth(config: &ScenarioConfig) -> Result<Vec<FrameAnnotations>, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut frames: Vec<FrameAnnotations> = (0..config.duration)
        .map(|frame| FrameAnnotations {
            frame,
            objects: Vec::new(),
        })
        .collect();

    for target in 0..config.num_targets {
        let window = config
            .spawns
            .get(target)
            .copied()
            .unwrap_or(SpawnWindow {
                birth: 0,
                death: config.duration,
            });
        let class = config.classes[rng.random_range(0..config.classes.len())].clone();
        let l = uniform(&mut rng, class.length);
        let w = uniform(&mut rng, class.width);
        let h = uniform(&mut rng, class.height);
        let margin = (l * l + w * w).sqrt() / 2.0 + 0.1;
        let lo = [config.roi_min[0] + margin, config.roi_min[1] + margin];
        let hi = [config.roi_max[0] - margin, config.roi_max[1] - margin];
        let z_lo = config.roi_min[2] + h / 2.0;
        let z_hi = (z_lo + 0.5).min(config.roi_max[2] - h / 2.0);
        let omega_max = config.turn_rate_range[0]
            .abs()
            .max(config.turn_rate_range[1].abs());
        let mut state = StateVector::zeros();
        state[0] = uniform(&mut rng, [lo[0], hi[0]]);
        state[1] = uniform(&mut rng, [lo[1], hi[1]]);
        state[2] = uniform(&mut rng, [z_lo, z_hi.max(z_lo)]);
        state[3] = l;
        state[4] = w;
        state[5] = h;
        state[6] = uniform(&mut rng, [-PI, PI]);
        state[7] = uniform(&mut rng, config.speed_range);
        state[8] = uniform(&mut rng, config.turn_rate_range);
        let mut segment_left = rng.random_range(config.segment_frames[0]..=config.segment_frames[1]);
        let mut steering = false;

        for frame in window.birth..window.death {
            let bbox = OrientedBox3D::new(
                [state[0], state[1], state[2]],
                [l, w, h],
                state[6],
            )
            .expect("sim state is a valid box");
            frames[frame].objects.push(Annotation {
                track_id: Some(target as i64),
                class: class.name.clone(),
                bbox,
                score: None,
            });

            // Wall avoidance stays inside the coordinated-turn family: near a
            // wall with an outward heading, hold a max-rate turn toward the
            // interior until roughly aligned, then resume random segments.
            // Discontinuous course changes would be unfollowable by any
            // CT-model tracker, so they never occur in truth.
            let d_wall = (state[0] - lo[0])
                .min(hi[0] - state[0])
                .min(state[1] - lo[1])
                .min(hi[1] - state[1]);
            let trigger = if omega_max > 0.0 {
                1.35 * state[7] / omega_max + 3.0 * state[7] * config.dt
            } else {
                0.0
            };
            let to_center = ((lo[1] + hi[1]) / 2.0 - state[1])
                .atan2((lo[0] + hi[0]) / 2.0 - state[0]);
            let misalign = wrap_angle(to_center - state[6]);
            if d_wall < trigger && misalign.abs() > PI / 3.0 {
                state[8] = omega_max.copysign(misalign);
                steering = true;
            } else if steering {
                steering = false;
                state[7] = uniform(&mut rng, config.speed_range);
                state[8] = uniform(&mut rng, config.turn_rate_range);
                segment_left =
                    rng.random_range(config.segment_frames[0]..=config.segment_frames[1]);
            }
            if !steering {
                if segment_left == 0 {
                    state[7] = uniform(&mut rng, config.speed_range);
                    state[8] = uniform(&mut rng, config.turn_rate_range);
                    segment_left =
                        rng.random_range(config.segment_frames[0]..=config.segment_frames[1]);
                }
                segment_left -= 1;
            }

            let mut next = ct_transition(&state, config.dt);
            // failsafe for spawns aimed at a corner faster than any turn can
            // recover: reflect, which is rare enough not to matter
            if next[0] < lo[0] || next[0] > hi[0] {
                state[6] = wrap_angle(PI - state[6]);
                next = ct_transition(&state, config.dt);
            }
            if next[1] < lo[1] || next[1] > hi[1] {
                state[6] = wrap_angle(-state[6]);
                next = ct_transition(&state, config.dt);
            }
            next[0] = next[0].clamp(lo[0], hi[0]);
            next[1] = next[1].clamp(lo[1], hi[1]);
            state = next;
        }
    }
    Ok(frames)
}

/// Renders a noisy detection stream from a truth sequence.
///
/// Every truth box is independently detected with probability `p_detect`
/// and perturbed with zero-mean Gaussian noise per `r_diag` (sizes floored
/// at 5 cm); a Poisson number of clutter boxes with class-plausible sizes
/// is scattered uniformly over the ROI.
pub fn render_measurements(
    truth: &[FrameAnnotations],
    config: &ScenarioConfig,
) -> Result<Vec<Vec<Measurement>>, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ MEASUREMENT_STREAM_SALT);
    let noise: Vec<Normal<f64>> = config
        .r_diag
        .iter()
        .map(|&v| Normal::new(0.0, v.sqrt()).expect("validated nonnegative variance"))
        .collect();
    let clutter_dist = if config.clutter_rate > 0.0 {
        Some(Poisson::new(config.clutter_rate).expect("validated positive rate"))
    } else {
        None
    };

    let mut out = Vec::with_capacity(truth.len());
    for fa in truth {
        let mut ms = Vec::new();
        for obj in &fa.objects {
            if rng.random::<f64>() >= config.p_detect {
                continue;
            }
            let c = obj.bbox.center();
            let s = obj.bbox.size();
            let mut z = [
                c[0], c[1], c[2], s[0], s[1], s[2],
                obj.bbox.yaw(),
            ];
            for (k, dist) in noise.iter().enumerate() {
                z[k] += dist.sample(&mut rng);
            }
            for v in &mut z[3..6] {
                *v = v.max(0.05);
            }
            let bbox = OrientedBox3D::new([z[0], z[1], z[2]], [z[3], z[4], z[5]], z[6])
                .expect("noisy sizes floored at 5 cm");
            let score = rng.random_range(0.5..1.0);
            ms.push(
                Measurement::new(bbox, obj.class.clone(), score)
                    .expect("finite score by construction"),
            );
        }
        if let Some(dist) = &clutter_dist {
            let count = dist.sample(&mut rng) as usize;
            for _ in 0..count {
                let class = &config.classes[rng.random_range(0..config.classes.len())];
                let l = uniform(&mut rng, class.length);
                let w = uniform(&mut rng, class.width);
                let h = uniform(&mut rng, class.height);
                let x = uniform(&mut rng, [config.roi_min[0], config.roi_max[0]]);
                let y = uniform(&mut rng, [config.roi_min[1], config.roi_max[1]]);
                let z_lo = config.roi_min[2] + h / 2.0;
                let z_hi = (z_lo + 0.5).min(config.roi_max[2] - h / 2.0);
                let z = uniform(&mut rng, [z_lo, z_hi.max(z_lo)]);
                let yaw = uniform(&mut rng, [-PI, PI]);
                let bbox = OrientedBox3D::new([x, y, z], [l, w, h], yaw)
                    .expect("class sizes are positive");
                let score = rng.random_range(0.1..0.7);
                ms.push(
                    Measurement::new(bbox, class.name.clone(), score)
                        .expect("finite score by construction"),
                );
            }
        }
        out.push(ms);
    }
    Ok(out)
}

/// Convenience: truth plus measurements in one call.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario, SimError> {
    let truth = generate_truth(config)?;
    let measurements = render_measurements(&truth, config)?;
    Ok(Scenario {
        truth,
        measurements,
    })
}

/// Lowers per-frame measurements into annotation frames (for persistence).
pub fn measurements_to_annotations(measurements: &[Vec<Measurement>]) -> Vec<FrameAnnotations> {
    measurements
        .iter()
        .enumerate()
        .map(|(frame, ms)| FrameAnnotations {
            frame,
            objects: ms
                .iter()
                .map(|m| Annotation {
                    track_id: None,
                    class: m.class.clone(),
                    bbox: *m.bbox(),
                    score: Some(m.score),
                })
                .collect(),
        })
        .collect()
}

/// Lifts possibly sparse annotation frames into a dense measurement stream
/// of `num_frames` frames (default: up to the highest frame present).
/// Unscored annotations get a neutral 0.5 score.
pub fn annotations_to_measurements(
    frames: &[FrameAnnotations],
    num_frames: Option<usize>,
) -> Vec<Vec<Measurement>> {
    let highest = frames.iter().map(|fa| fa.frame + 1).max().unwrap_or(0);
    let count = num_frames.unwrap_or(highest).max(highest);
    let mut out = vec![Vec::new(); count];
    for fa in frames {
        out[fa.frame] = fa
            .objects
            .iter()
            .map(|obj| {
                Measurement::new(obj.bbox, obj.class.clone(), obj.score.unwrap_or(0.5))
                    .expect("annotation scores are finite")
            })
            .collect();
    }
    out
}
