//! Oriented 3D boxes and similarity scores between them.
//!
//! Two similarity measures are provided. [`srts`] is the fast
//! scale-rotation-translation score: a weighted average of three sub-scores,
//! gated by an intersection penalty. [`rotated_iou_3d`] is the exact
//! intersection-over-union for yaw-rotated boxes, computed by convex polygon
//! clipping in the ground plane; it serves as the validation oracle and
//! benchmark baseline for the SRT score.
//!
//! Unlike IoU, the SRT score discriminates orientation: two boxes of equal
//! size and position whose yaws differ by pi have IoU 1 but an SRT score
//! well below 1.

mod polygon;

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub use polygon::{clip_convex, polygon_area};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box size components must be strictly positive, got ({0}, {1}, {2})")]
    NonPositiveSize(f64, f64, f64),
    #[error("box fields must be finite")]
    NonFinite,
    #[error("invalid SRT parameters: {0}")]
    InvalidParams(String),
    #[error("failed to parse box '{input}': {reason}")]
    Parse { input: String, reason: String },
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = angle % two_pi;
    if a <= -PI {
        a += two_pi;
    } else if a > PI {
        a -= two_pi;
    }
    a
}

/// A 3D box with center position, size and a rotation about the vertical axis.
///
/// Invariants are enforced at construction: sizes strictly positive, yaw
/// normalized to `(-pi, pi]`, all fields finite. Every operation in this
/// module is total on constructed boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrientedBox3D {
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
}

impl OrientedBox3D {
    /// Creates a box from center `[x, y, z]` (meters), size
    /// `[length, width, height]` (meters) and yaw (radians).
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> Result<Self, GeometryError> {
        let finite = center.iter().chain(size.iter()).all(|v| v.is_finite()) && yaw.is_finite();
        if !finite {
            return Err(GeometryError::NonFinite);
        }
        if size.iter().any(|&s| s <= 0.0) {
            return Err(GeometryError::NonPositiveSize(size[0], size[1], size[2]));
        }
        Ok(Self {
            center,
            size,
            yaw: wrap_angle(yaw),
        })
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn size(&self) -> [f64; 3] {
        self.size
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    /// Length of the full 3D diagonal.
    pub fn diagonal(&self) -> f64 {
        (self.size[0] * self.size[0] + self.size[1] * self.size[1] + self.size[2] * self.size[2])
            .sqrt()
    }

    /// Euclidean distance between the centers of two boxes.
    pub fn center_distance(&self, other: &Self) -> f64 {
        let dx = self.center[0] - other.center[0];
        let dy = self.center[1] - other.center[1];
        let dz = self.center[2] - other.center[2];
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Ground-plane footprint corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.size[0] / 2.0;
        let hw = self.size[1] / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[x, y]| {
            [
                self.center[0] + c * x - s * y,
                self.center[1] + s * x + c * y,
            ]
        })
    }

    /// Vertical extent `(z_min, z_max)`.
    pub fn z_interval(&self) -> (f64, f64) {
        let hh = self.size[2] / 2.0;
        (self.center[2] - hh, self.center[2] + hh)
    }

    /// Axis-aligned bounding box `(min, max)` of the rotated box.
    pub fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        let corners = self.bev_corners();
        let (z0, z1) = self.z_interval();
        let mut min = [f64::INFINITY, f64::INFINITY, z0];
        let mut max = [f64::NEG_INFINITY, f64::NEG_INFINITY, z1];
        for [x, y] in corners {
            min[0] = min[0].min(x);
            min[1] = min[1].min(y);
            max[0] = max[0].max(x);
            max[1] = max[1].max(y);
        }
        (min, max)
    }

    /// Whether `point` lies inside the box (surface inclusive).
    pub fn contains(&self, point: [f64; 3]) -> bool {
        let dx = point[0] - self.center[0];
        let dy = point[1] - self.center[1];
        let dz = point[2] - self.center[2];
        if dz.abs() > self.size[2] / 2.0 {
            return false;
        }
        // rotate the offset into the box frame
        let (s, c) = self.yaw.sin_cos();
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= self.size[0] / 2.0 && ly.abs() <= self.size[1] / 2.0
    }
}

impl fmt::Display for OrientedBox3D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.center[0],
            self.center[1],
            self.center[2],
            self.size[0],
            self.size[1],
            self.size[2],
            self.yaw
        )
    }
}

impl FromStr for OrientedBox3D {
    type Err = GeometryError;

    /// Parses `"x,y,z,l,w,h,yaw"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| {
            t.trim().parse::<f64>().map_err(|e| GeometryError::Parse {
                input: s.to_string(),
                reason: e.to_string(),
            })
        };
        let fields: Vec<&str> = s.split(',').collect();
        if fields.len() != 7 {
            return Err(GeometryError::Parse {
                input: s.to_string(),
                reason: format!("expected 7 comma-separated numbers, got {}", fields.len()),
            });
        }
        let v: Vec<f64> = fields.iter().map(|t| parse(t)).collect::<Result<_, _>>()?;
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6])
    }
}

/// Parameters of the SRT score: per-score strictness and composite weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrtsParams {
    /// Scale strictness, > 0. Smaller values punish size mismatch harder.
    pub w_s: f64,
    /// Translation strictness, > 0.
    pub w_t: f64,
    /// Rotation strictness, in `(0, 1]`.
    pub w_r: f64,
    /// Weight of the scale sub-score.
    pub alpha: f64,
    /// Weight of the translation sub-score.
    pub beta: f64,
    /// Weight of the rotation sub-score.
    pub gamma: f64,
    /// Use the symmetric per-axis max/min size ratio instead of treating the
    /// first argument as reference.
    pub symmetric_scale: bool,
}

impl Default for SrtsParams {
    fn default() -> Self {
        Self {
            w_s: 0.3,
            w_t: 1.0,
            w_r: 0.5,
            alpha: 0.3,
            beta: 0.3,
            gamma: 0.4,
            symmetric_scale: false,
        }
    }
}

impl SrtsParams {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [self.w_s, self.w_t, self.w_r, self.alpha, self.beta, self.gamma];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidParams("non-finite parameter".into()));
        }
        if self.w_s <= 0.0 || self.w_t <= 0.0 {
            return Err(GeometryError::InvalidParams(
                "w_s and w_t must be strictly positive".into(),
            ));
        }
        if self.w_r <= 0.0 || self.w_r > 1.0 {
            return Err(GeometryError::InvalidParams("w_r must lie in (0, 1]".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(GeometryError::InvalidParams(
                "composite weights must be non-negative".into(),
            ));
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(GeometryError::InvalidParams(format!(
                "alpha + beta + gamma must equal 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Scale sub-score: `1 - min((|1-s_x| + |1-s_y| + |1-s_z|) / w_s, 1)`.
///
/// The per-axis ratios `s_i` are `candidate / reference`, with the first
/// argument treated as reference. The score is therefore asymmetric; see
/// [`srts_scale_symmetric`] for a metric-like variant.
pub fn srts_scale(reference: &OrientedBox3D, candidate: &OrientedBox3D, w_s: f64) -> f64 {
    let rs = reference.size();
    let cs = candidate.size();
    let dev: f64 = (0..3).map(|i| (1.0 - cs[i] / rs[i]).abs()).sum();
    1.0 - (dev / w_s).min(1.0)
}

/// Scale sub-score with symmetric per-axis ratios `max(a_i, b_i) / min(a_i, b_i)`.
pub fn srts_scale_symmetric(a: &OrientedBox3D, b: &OrientedBox3D, w_s: f64) -> f64 {
    let sa = a.size();
    let sb = b.size();
    let dev: f64 = (0..3)
        .map(|i| (1.0 - sa[i].max(sb[i]) / sa[i].min(sb[i])).abs())
        .sum();
    1.0 - (dev / w_s).min(1.0)
}

/// Rotation sub-score: `max(0, 1 - theta / (w_r * pi))` with `theta` the
/// absolute yaw difference wrapped into `[0, pi]`.
pub fn srts_rotation(yaw_a: f64, yaw_b: f64, w_r: f64) -> f64 {
    let theta = wrap_angle(yaw_a - yaw_b).abs();
    (1.0 - theta / (w_r * PI)).max(0.0)
}

/// Translation sub-score and intersection penalty.
///
/// Each box contributes a radius `r_i = d_i * w_t / 2` from its full 3D
/// diagonal `d_i`; with `t` the center distance, the score is
/// `max(0, (r_1 + r_2 - t) / (r_1 + r_2))` and the penalty is 0 iff
/// `r_1 + r_2 < t` (the boxes cannot intersect), else 1.
pub fn srts_translation(a: &OrientedBox3D, b: &OrientedBox3D, w_t: f64) -> (f64, f64) {
    let r_sum = (a.diagonal() + b.diagonal()) * w_t / 2.0;
    let t = a.center_distance(b);
    // sizes are strictly positive, so r_sum > 0
    debug_assert!(r_sum > 0.0);
    let score = ((r_sum - t) / r_sum).max(0.0);
    let penalty = if r_sum < t { 0.0 } else { 1.0 };
    (score, penalty)
}

/// The composite SRT score `p_t * (alpha*S_s + beta*S_t + gamma*S_r)`.
///
/// Result lies in `[0, 1]`; 1 for identical boxes. The first argument is the
/// reference for the scale ratios unless `params.symmetric_scale` is set.
pub fn srts(a: &OrientedBox3D, b: &OrientedBox3D, params: &SrtsParams) -> f64 {
    debug_assert!(params.validate().is_ok());
    let s_s = if params.symmetric_scale {
        srts_scale_symmetric(a, b, params.w_s)
    } else {
        srts_scale(a, b, params.w_s)
    };
    let s_r = srts_rotation(a.yaw(), b.yaw(), params.w_r);
    let (s_t, p_t) = srts_translation(a, b, params.w_t);
    p_t * (params.alpha * s_s + params.beta * s_t + params.gamma * s_r)
}

/// Exact intersection-over-union for yaw-rotated 3D boxes.
///
/// Intersection volume is the clipped ground-plane polygon area times the
/// vertical overlap; footprint areas below 1e-12 m^2 count as empty.
/// Symmetric in its arguments.
pub fn rotated_iou_3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let (za0, za1) = a.z_interval();
    let (zb0, zb1) = b.z_interval();
    let dz = za1.min(zb1) - za0.max(zb0);
    if dz <= 0.0 {
        return 0.0;
    }
    let clipped = clip_convex(&a.bev_corners(), &b.bev_corners());
    let area = polygon_area(&clipped);
    if area < 1e-12 {
        return 0.0;
    }
    let inter = area * dz;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}
