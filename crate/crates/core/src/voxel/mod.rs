//! Semantic point-cloud voxelization.
//!
//! A lidar [`PointCloud`] is quantized onto a dense [`VoxelGrid`] over a fixed
//! region of interest. Three feature modes exist: binary occupancy, mean
//! point intensity, and a semantic class value obtained by projecting points
//! into a per-pixel class map ([`SemanticMap`]) through a camera
//! [`Calibration`] and voting per cell. Intensity and semantic features are
//! normalized into `[1, 2]` so that empty cells (value 0) stay separable.

mod svxl;

use crate::geometry::wrap_angle;
use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub use svxl::{read_svxl, write_svxl, SvxlData, SVXL_HEADER_LEN, SVXL_MAGIC, SVXL_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoxelError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("class id {id} out of range for {num_classes} classes")]
    ClassOutOfRange { id: u8, num_classes: usize },
    #[error("semantic map size {got_w}x{got_h} does not match expected {want_w}x{want_h}")]
    DimensionMismatch {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("semantic mode requires at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("failed to decode class map image: {0}")]
    Image(String),
    #[error("malformed voxel grid data: {0}")]
    Format(String),
}

/// A lidar point in the sensor frame with normalized intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

/// An unordered collection of lidar points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-pixel semantic class indices for one camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    width: u32,
    height: u32,
    class_ids: Vec<u8>,
    num_classes: usize,
}

impl SemanticMap {
    /// Builds a map from row-major class ids; every id must be `< num_classes`.
    pub fn new(
        width: u32,
        height: u32,
        class_ids: Vec<u8>,
        num_classes: usize,
    ) -> Result<Self, VoxelError> {
        if class_ids.len() != (width as usize) * (height as usize) {
            return Err(VoxelError::DimensionMismatch {
                want_w: width,
                want_h: height,
                got_w: class_ids.len() as u32,
                got_h: 1,
            });
        }
        if let Some(&id) = class_ids.iter().find(|&&id| (id as usize) >= num_classes) {
            return Err(VoxelError::ClassOutOfRange { id, num_classes });
        }
        Ok(Self {
            width,
            height,
            class_ids,
            num_classes,
        })
    }

    /// Decodes an 8-bit single-channel PNG of class ids.
    pub fn from_png_bytes(bytes: &[u8], num_classes: usize) -> Result<Self, VoxelError> {
        let img = image::load_from_memory(bytes).map_err(|e| VoxelError::Image(e.to_string()))?;
        let luma = match img {
            image::DynamicImage::ImageLuma8(buf) => buf,
            other => {
                return Err(VoxelError::Image(format!(
                    "expected 8-bit single-channel PNG, got {:?}",
                    other.color()
                )))
            }
        };
        let (w, h) = (luma.width(), luma.height());
        Self::new(w, h, luma.into_raw(), num_classes)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_at(&self, u: u32, v: u32) -> u8 {
        self.class_ids[v as usize * self.width as usize + u as usize]
    }
}

/// Camera calibration: projection, rectification and the rigid lidar-to-camera
/// transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    projection: Matrix3x4<f64>,
    rectification: Matrix3<f64>,
    lidar_to_cam: Matrix3x4<f64>,
}

impl Calibration {
    pub fn new(
        projection: Matrix3x4<f64>,
        rectification: Matrix3<f64>,
        lidar_to_cam: Matrix3x4<f64>,
    ) -> Result<Self, VoxelError> {
        if projection.iter().any(|v| !v.is_finite())
            || rectification.iter().any(|v| !v.is_finite())
            || lidar_to_cam.iter().any(|v| !v.is_finite())
        {
            return Err(VoxelError::InvalidCalibration("non-finite entry".into()));
        }
        if projection.rank(1e-9) < 3 {
            return Err(VoxelError::InvalidCalibration(
                "projection matrix is rank-deficient".into(),
            ));
        }
        for (name, r) in [
            ("rectification", rectification),
            ("lidar_to_cam rotation", lidar_to_cam.fixed_view::<3, 3>(0, 0).into_owned()),
        ] {
            let err = (r * r.transpose() - Matrix3::identity()).abs().max();
            if err > 1e-6 {
                return Err(VoxelError::InvalidCalibration(format!(
                    "{name} is not orthonormal (max deviation {err:.2e})"
                )));
            }
        }
        Ok(Self {
            projection,
            rectification,
            lidar_to_cam,
        })
    }

    /// Identity extrinsics with a pinhole projection `[I | 0]`.
    pub fn identity() -> Self {
        Self {
            projection: Matrix3x4::identity(),
            rectification: Matrix3::identity(),
            lidar_to_cam: Matrix3x4::identity(),
        }
    }

    /// The canonical velodyne-to-camera axis permutation
    /// (x_cam = -y_lidar, y_cam = -z_lidar, z_cam = x_lidar) with a plausible
    /// pinhole intrinsic. Used by the simulator when no real calibration file
    /// is in play.
    pub fn sensor_default() -> Self {
        let projection = Matrix3x4::new(
            700.0, 0.0, 600.0, 0.0, //
            0.0, 700.0, 180.0, 0.0, //
            0.0, 0.0, 1.0, 0.0,
        );
        let lidar_to_cam = Matrix3x4::new(
            0.0, -1.0, 0.0, 0.0, //
            0.0, 0.0, -1.0, 0.0, //
            1.0, 0.0, 0.0, 0.0,
        );
        Self {
            projection,
            rectification: Matrix3::identity(),
            lidar_to_cam,
        }
    }

    pub fn projection(&self) -> &Matrix3x4<f64> {
        &self.projection
    }

    pub fn rectification(&self) -> &Matrix3<f64> {
        &self.rectification
    }

    pub fn lidar_to_cam(&self) -> &Matrix3x4<f64> {
        &self.lidar_to_cam
    }

    /// Maps a sensor-frame point into the rectified camera frame.
    pub fn lidar_to_rect(&self, p: [f64; 3]) -> [f64; 3] {
        let cam = self.lidar_to_cam * Vector4::new(p[0], p[1], p[2], 1.0);
        let rect = self.rectification * cam;
        [rect.x, rect.y, rect.z]
    }

    /// Inverse of [`Self::lidar_to_rect`].
    pub fn rect_to_lidar(&self, p: [f64; 3]) -> [f64; 3] {
        let cam = self.rectification.transpose() * Vector3::new(p[0], p[1], p[2]);
        let r = self.lidar_to_cam.fixed_view::<3, 3>(0, 0);
        let t = self.lidar_to_cam.column(3);
        let lidar = r.transpose() * (cam - t);
        [lidar.x, lidar.y, lidar.z]
    }

    /// Rotates a sensor-frame direction into the rectified camera frame.
    pub fn rotate_lidar_to_rect(&self, d: [f64; 3]) -> [f64; 3] {
        let r = self.lidar_to_cam.fixed_view::<3, 3>(0, 0);
        let out = self.rectification * r * Vector3::new(d[0], d[1], d[2]);
        [out.x, out.y, out.z]
    }

    /// Rotates a rectified-camera-frame direction into the sensor frame.
    pub fn rotate_rect_to_lidar(&self, d: [f64; 3]) -> [f64; 3] {
        let r = self.lidar_to_cam.fixed_view::<3, 3>(0, 0);
        let out = r.transpose() * self.rectification.transpose() * Vector3::new(d[0], d[1], d[2]);
        [out.x, out.y, out.z]
    }
}

/// Dense 3D grid layout over a region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub roi_min: [f64; 3],
    pub roi_max: [f64; 3],
    pub dims: [usize; 3],
}

impl Default for GridSpec {
    /// ROI `[0,60] x [-40,40] x [-2.73,1.27]` m at `768 x 1024 x 21` cells,
    /// roughly 0.078 x 0.078 x 0.19 m per cell.
    fn default() -> Self {
        Self {
            roi_min: [0.0, -40.0, -2.73],
            roi_max: [60.0, 40.0, 1.27],
            dims: [768, 1024, 21],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), VoxelError> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(VoxelError::InvalidSpec("zero-extent dims".into()));
        }
        for i in 0..3 {
            if !self.roi_min[i].is_finite() || !self.roi_max[i].is_finite() {
                return Err(VoxelError::InvalidSpec("non-finite ROI".into()));
            }
            if self.roi_max[i] <= self.roi_min[i] {
                return Err(VoxelError::InvalidSpec(format!(
                    "roi_max must exceed roi_min on axis {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn cell_size(&self) -> [f64; 3] {
        [
            (self.roi_max[0] - self.roi_min[0]) / self.dims[0] as f64,
            (self.roi_max[1] - self.roi_min[1]) / self.dims[1] as f64,
            (self.roi_max[2] - self.roi_min[2]) / self.dims[2] as f64,
        ]
    }

    pub fn num_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Cell index of a point, or `None` when it lies outside the ROI. Points
    /// exactly on the upper ROI face map to the last cell.
    pub fn cell_index(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let cell = self.cell_size();
        let mut idx = [0usize; 3];
        for i in 0..3 {
            if p[i] < self.roi_min[i] || p[i] > self.roi_max[i] {
                return None;
            }
            let k = ((p[i] - self.roi_min[i]) / cell[i]).floor() as usize;
            idx[i] = k.min(self.dims[i] - 1);
        }
        Some(idx)
    }

    /// Flat offset of a cell, x-major then y then z.
    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }
}

/// Which scalar feature each cell carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Occupancy,
    Intensity,
    Semantic,
}

impl FeatureMode {
    pub fn as_u8(self) -> u8 {
        match self {
            FeatureMode::Occupancy => 0,
            FeatureMode::Intensity => 1,
            FeatureMode::Semantic => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(FeatureMode::Occupancy),
            1 => Some(FeatureMode::Intensity),
            2 => Some(FeatureMode::Semantic),
            _ => None,
        }
    }
}

/// Dense scalar feature grid over a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub mode: FeatureMode,
    pub values: Vec<f32>,
}

impl VoxelGrid {
    pub fn value_at(&self, idx: [usize; 3]) -> f32 {
        self.values[self.spec.flat_index(idx)]
    }

    pub fn occupied_cells(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Options controlling [`voxelize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoxelizeOptions {
    pub mode: FeatureMode,
    /// Number of semantic classes; class values normalize to
    /// `1 + id / (num_classes - 1)`.
    pub num_classes: usize,
    /// In semantic mode, give cells whose points are all outside the camera
    /// view the occupancy value 1 instead of leaving them empty.
    pub unlabeled_as_occupied: bool,
}

impl Default for VoxelizeOptions {
    fn default() -> Self {
        Self {
            mode: FeatureMode::Occupancy,
            num_classes: 19,
            unlabeled_as_occupied: false,
        }
    }
}

/// Result of projecting one lidar point into the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointProjection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub in_view: bool,
}

/// Projects all points through the calibration chain into pixel coordinates.
///
/// A point is in view iff its depth is positive and its rounded pixel lies
/// inside the `width x height` image.
pub fn project_to_image(
    cloud: &PointCloud,
    calib: &Calibration,
    width: u32,
    height: u32,
) -> Vec<PointProjection> {
    cloud
        .points
        .iter()
        .map(|p| {
            let rect = calib.lidar_to_rect([p.x as f64, p.y as f64, p.z as f64]);
            let hom = calib.projection * Vector4::new(rect[0], rect[1], rect[2], 1.0);
            let depth = hom.z;
            if depth <= 0.0 {
                return PointProjection {
                    u: 0.0,
                    v: 0.0,
                    depth,
                    in_view: false,
                };
            }
            let u = hom.x / depth;
            let v = hom.y / depth;
            let (pu, pv) = (u.round(), v.round());
            let in_view =
                pu >= 0.0 && pv >= 0.0 && (pu as u32) < width && (pv as u32) < height;
            PointProjection {
                u,
                v,
                depth,
                in_view,
            }
        })
        .collect()
}

/// Labels each point with the semantic class under its projected pixel
/// (nearest-neighbor sampling); points outside the camera view get `None`.
pub fn paint_semantics(
    cloud: &PointCloud,
    map: &SemanticMap,
    calib: &Calibration,
) -> Vec<Option<u8>> {
    let projections = project_to_image(cloud, calib, map.width(), map.height());
    projections
        .iter()
        .map(|p| {
            if p.in_view {
                Some(map.class_at(p.u.round() as u32, p.v.round() as u32))
            } else {
                None
            }
        })
        .collect()
}

#[derive(Default)]
struct CellAcc {
    count: u32,
    intensities: Vec<f32>,
    class_votes: BTreeMap<u8, u32>,
}

/// Quantizes a point cloud onto the grid.
///
/// Points outside the ROI are discarded. Occupancy mode marks occupied cells
/// with 1. Intensity mode stores `1 + mean intensity`. Semantic mode takes
/// the per-cell majority class over labeled points (ties to the smallest
/// class id) and stores `1 + class / (num_classes - 1)`; cells with points
/// but no in-view label are left empty unless `unlabeled_as_occupied` is set.
pub fn voxelize(
    cloud: &PointCloud,
    labels: Option<&[Option<u8>]>,
    spec: &GridSpec,
    opts: &VoxelizeOptions,
) -> Result<VoxelGrid, VoxelError> {
    spec.validate()?;
    if opts.mode == FeatureMode::Semantic && opts.num_classes < 2 {
        return Err(VoxelError::TooFewClasses(opts.num_classes));
    }
    if let Some(labels) = labels {
        if labels.len() != cloud.len() {
            return Err(VoxelError::Format(format!(
                "label count {} does not match point count {}",
                labels.len(),
                cloud.len()
            )));
        }
    }

    let mut cells: BTreeMap<usize, CellAcc> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let Some(idx) = spec.cell_index([p.x as f64, p.y as f64, p.z as f64]) else {
            continue;
        };
        let acc = cells.entry(spec.flat_index(idx)).or_default();
        acc.count += 1;
        match opts.mode {
            FeatureMode::Occupancy => {}
            FeatureMode::Intensity => acc.intensities.push(p.intensity),
            FeatureMode::Semantic => {
                if let Some(class) = labels.and_then(|l| l[i]) {
                    if class as usize >= opts.num_classes {
                        return Err(VoxelError::ClassOutOfRange {
                            id: class,
                            num_classes: opts.num_classes,
                        });
                    }
                    *acc.class_votes.entry(class).or_insert(0) += 1;
                }
            }
        }
    }

    let mut values = vec![0.0f32; spec.num_cells()];
    for (flat, acc) in cells {
        let value = match opts.mode {
            FeatureMode::Occupancy => 1.0,
            FeatureMode::Intensity => {
                // sort before summing so the mean is independent of point order
                let mut v = acc.intensities;
                v.sort_by(f32::total_cmp);
                let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
                (1.0 + mean) as f32
            }
            FeatureMode::Semantic => {
                // ties go to the smallest class id
                let winner = acc
                    .class_votes
                    .iter()
                    .max_by_key(|&(&class, &count)| (count, std::cmp::Reverse(class)))
                    .map(|(&class, _)| class);
                match winner {
                    Some(class) => {
                        (1.0 + class as f64 / (opts.num_classes as f64 - 1.0)) as f32
                    }
                    None if opts.unlabeled_as_occupied => 1.0,
                    None => 0.0,
                }
            }
        };
        values[flat] = value;
    }

    Ok(VoxelGrid {
        spec: *spec,
        mode: opts.mode,
        values,
    })
}

/// Yaw of a sensor-frame heading after rotation into the rectified camera
/// frame, expressed as the KITTI `rotation_y` convention.
pub fn yaw_to_rotation_y(yaw: f64, calib: &Calibration) -> f64 {
    let h = calib.rotate_lidar_to_rect([yaw.cos(), yaw.sin(), 0.0]);
    wrap_angle((-h[2]).atan2(h[0]))
}

/// Inverse of [`yaw_to_rotation_y`].
pub fn rotation_y_to_yaw(rotation_y: f64, calib: &Calibration) -> f64 {
    let h = calib.rotate_rect_to_lidar([rotation_y.cos(), 0.0, -rotation_y.sin()]);
    wrap_angle(h[1].atan2(h[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn pt(x: f32, y: f32, z: f32) -> LidarPoint {
        LidarPoint {
            x,
            y,
            z,
            intensity: 0.0,
        }
    }

    #[test]
    fn default_grid_matches_expected_geometry() {
        let spec = GridSpec::default();
        assert_eq!(spec.dims, [768, 1024, 21]);
        let cell = spec.cell_size();
        assert!((cell[0] - 0.078).abs() / 0.078 < 0.02);
        assert!((cell[1] - 0.078).abs() / 0.078 < 0.02);
        assert!((cell[2] - 0.190).abs() / 0.190 < 0.02);
    }

    #[test]
    fn spec_validation() {
        let mut spec = GridSpec::default();
        spec.dims[1] = 0;
        assert!(spec.validate().is_err());
        let mut spec = GridSpec::default();
        spec.roi_max[0] = spec.roi_min[0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn projection_of_optical_axis_hits_principal_point() {
        let projection = Matrix3x4::new(
            700.0, 0.0, 333.0, 0.0, //
            0.0, 700.0, 111.0, 0.0, //
            0.0, 0.0, 1.0, 0.0,
        );
        let calib = Calibration::new(projection, Matrix3::identity(), Matrix3x4::identity())
            .unwrap();
        let cloud = PointCloud::new(vec![pt(0.0, 0.0, 10.0)]);
        let proj = project_to_image(&cloud, &calib, 1242, 375);
        assert!(proj[0].in_view);
        assert_relative_eq!(proj[0].u, 333.0);
        assert_relative_eq!(proj[0].v, 111.0);
    }

    #[test]
    fn point_behind_camera_not_in_view() {
        let calib = Calibration::sensor_default();
        // sensor x is forward for this calibration; negative x is behind
        let cloud = PointCloud::new(vec![pt(-5.0, 0.0, 0.0)]);
        let proj = project_to_image(&cloud, &calib, 1242, 375);
        assert!(!proj[0].in_view);
        assert!(proj[0].depth <= 0.0);
    }

    #[test]
    fn fixture_projection_matches_matrix_chain_oracle() {
        // Hand-assembled calibration; expected pixel frozen from an
        // independent matrix-product evaluation of P * R0 * Tr * [p; 1].
        let projection = Matrix3x4::new(
            721.5377, 0.0, 609.5593, 44.85728, //
            0.0, 721.5377, 172.854, 0.2163791, //
            0.0, 0.0, 1.0, 0.002745884,
        );
        let c = 0.9998_f64;
        let s = (1.0 - c * c).sqrt();
        let rect = Matrix3::new(
            c, -s, 0.0, //
            s, c, 0.0, //
            0.0, 0.0, 1.0,
        );
        let lidar_to_cam = Matrix3x4::new(
            0.0, -1.0, 0.0, -0.002, //
            0.0, 0.0, -1.0, -0.075, //
            1.0, 0.0, 0.0, -0.272,
        );
        let calib = Calibration::new(projection, rect, lidar_to_cam).unwrap();
        let p = [12.0_f64, -2.5, -0.8];

        // oracle: explicit chain
        let cam = [
            -p[1] - 0.002,
            -p[2] - 0.075,
            p[0] - 0.272,
        ];
        let rectp = [
            c * cam[0] - s * cam[1],
            s * cam[0] + c * cam[1],
            cam[2],
        ];
        let hx = 721.5377 * rectp[0] + 609.5593 * rectp[2] + 44.85728;
        let hy = 721.5377 * rectp[1] + 172.854 * rectp[2] + 0.2163791;
        let hz = rectp[2] + 0.002745884;

        let cloud = PointCloud::new(vec![pt(p[0] as f32, p[1] as f32, p[2] as f32)]);
        let proj = project_to_image(&cloud, &calib, 1242, 375);
        // f32 storage of the point dominates the tolerance
        assert_relative_eq!(proj[0].u, hx / hz, epsilon = 1e-4);
        assert_relative_eq!(proj[0].v, hy / hz, epsilon = 1e-4);
        assert!(proj[0].in_view);
    }

    #[test]
    fn paint_uniform_map_labels_every_in_view_point() {
        let calib = Calibration::sensor_default();
        let map = SemanticMap::new(1242, 375, vec![7u8; 1242 * 375], 19).unwrap();
        let cloud = PointCloud::new(vec![pt(10.0, 0.0, 0.0), pt(12.0, 1.0, -0.5)]);
        let labels = paint_semantics(&cloud, &map, &calib);
        assert_eq!(labels, vec![Some(7), Some(7)]);
    }

    #[test]
    fn paint_empty_cloud_is_empty() {
        let calib = Calibration::sensor_default();
        let map = SemanticMap::new(4, 4, vec![0; 16], 19).unwrap();
        assert!(paint_semantics(&PointCloud::default(), &map, &calib).is_empty());
    }

    #[test]
    fn paint_two_region_map_matches_projection() {
        let calib = Calibration::sensor_default();
        // left half class 3, right half class 11
        let (w, h) = (1242u32, 375u32);
        let mut ids = vec![0u8; (w * h) as usize];
        for v in 0..h {
            for u in 0..w {
                ids[(v * w + u) as usize] = if u < w / 2 { 3 } else { 11 };
            }
        }
        let map = SemanticMap::new(w, h, ids, 19).unwrap();
        // y > 0 in sensor frame maps to the left image half under the
        // canonical permutation (x_cam = -y)
        let cloud = PointCloud::new(vec![pt(10.0, 2.0, 0.0), pt(10.0, -2.0, 0.0)]);
        let proj = project_to_image(&cloud, &calib, w, h);
        for (i, pr) in proj.iter().enumerate() {
            assert!(pr.in_view, "point {i} should project into view");
        }
        let labels = paint_semantics(&cloud, &map, &calib);
        assert_eq!(labels, vec![Some(3), Some(11)]);
    }

    #[test]
    fn semantic_map_rejects_out_of_range_ids() {
        assert!(matches!(
            SemanticMap::new(2, 1, vec![0, 19], 19),
            Err(VoxelError::ClassOutOfRange { id: 19, .. })
        ));
        assert!(SemanticMap::new(2, 2, vec![0; 3], 19).is_err());
    }

    #[test]
    fn calibration_validation() {
        let bad_rot = Matrix3x4::new(
            2.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0,
        );
        assert!(Calibration::new(Matrix3x4::identity(), Matrix3::identity(), bad_rot).is_err());
        assert!(Calibration::new(Matrix3x4::zeros(), Matrix3::identity(), Matrix3x4::identity())
            .is_err());
    }

    #[test]
    fn voxelize_empty_cloud_gives_empty_grid() {
        let grid = voxelize(
            &PointCloud::default(),
            None,
            &GridSpec::default(),
            &VoxelizeOptions::default(),
        )
        .unwrap();
        assert_eq!(grid.occupied_cells(), 0);
    }

    #[test]
    fn corner_point_lands_in_first_cell() {
        let spec = GridSpec::default();
        // exact lower-corner semantics, checked in f64
        assert_eq!(spec.cell_index([0.0, -40.0, -2.73]), Some([0, 0, 0]));
        // storage is f32 and -2.73 rounds below the ROI floor, so use a z
        // that is representable and still inside the first cell
        let cloud = PointCloud::new(vec![pt(0.0, -40.0, -2.625)]);
        let grid = voxelize(&cloud, None, &spec, &VoxelizeOptions::default()).unwrap();
        assert_eq!(grid.value_at([0, 0, 0]), 1.0);
        assert_eq!(grid.occupied_cells(), 1);
    }

    #[test]
    fn upper_roi_face_maps_to_last_cell() {
        let spec = GridSpec::default();
        let cloud = PointCloud::new(vec![pt(60.0, 40.0, 1.27)]);
        let grid = voxelize(&cloud, None, &spec, &VoxelizeOptions::default()).unwrap();
        assert_eq!(grid.value_at([767, 1023, 20]), 1.0);
    }

    #[test]
    fn out_of_roi_points_discarded() {
        let spec = GridSpec::default();
        let cloud = PointCloud::new(vec![pt(-0.1, 0.0, 0.0), pt(61.0, 0.0, 0.0)]);
        let grid = voxelize(&cloud, None, &spec, &VoxelizeOptions::default()).unwrap();
        assert_eq!(grid.occupied_cells(), 0);
    }

    #[test]
    fn semantic_majority_vote_with_normalization() {
        let spec = GridSpec::default();
        let p = pt(10.0, 0.0, 0.0);
        let cloud = PointCloud::new(vec![p, p, p]);
        let labels = vec![Some(2u8), Some(5), Some(2)];
        let opts = VoxelizeOptions {
            mode: FeatureMode::Semantic,
            num_classes: 19,
            unlabeled_as_occupied: false,
        };
        let grid = voxelize(&cloud, Some(&labels), &spec, &opts).unwrap();
        let idx = spec.cell_index([10.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(
            grid.value_at(idx) as f64,
            1.0 + 2.0 / 18.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn semantic_tie_breaks_to_smallest_class() {
        let spec = GridSpec::default();
        let p = pt(10.0, 0.0, 0.0);
        let cloud = PointCloud::new(vec![p, p]);
        let labels = vec![Some(9u8), Some(4)];
        let opts = VoxelizeOptions {
            mode: FeatureMode::Semantic,
            num_classes: 19,
            unlabeled_as_occupied: false,
        };
        let grid = voxelize(&cloud, Some(&labels), &spec, &opts).unwrap();
        let idx = spec.cell_index([10.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(grid.value_at(idx) as f64, 1.0 + 4.0 / 18.0, epsilon = 1e-6);
    }

    #[test]
    fn unlabeled_cells_empty_or_occupied_by_flag() {
        let spec = GridSpec::default();
        let cloud = PointCloud::new(vec![pt(10.0, 0.0, 0.0)]);
        let labels = vec![None];
        let mut opts = VoxelizeOptions {
            mode: FeatureMode::Semantic,
            num_classes: 19,
            unlabeled_as_occupied: false,
        };
        let grid = voxelize(&cloud, Some(&labels), &spec, &opts).unwrap();
        assert_eq!(grid.occupied_cells(), 0);

        opts.unlabeled_as_occupied = true;
        let grid = voxelize(&cloud, Some(&labels), &spec, &opts).unwrap();
        let idx = spec.cell_index([10.0, 0.0, 0.0]).unwrap();
        assert_eq!(grid.value_at(idx), 1.0);
    }

    #[test]
    fn intensity_mode_stores_shifted_mean() {
        let spec = GridSpec::default();
        let mut a = pt(10.0, 0.0, 0.0);
        a.intensity = 0.2;
        let mut b = a;
        b.intensity = 0.6;
        let cloud = PointCloud::new(vec![a, b]);
        let opts = VoxelizeOptions {
            mode: FeatureMode::Intensity,
            ..Default::default()
        };
        let grid = voxelize(&cloud, None, &spec, &opts).unwrap();
        let idx = spec.cell_index([10.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(grid.value_at(idx) as f64, 1.4, epsilon = 1e-6);
    }

    #[test]
    fn semantic_mode_requires_enough_classes() {
        let opts = VoxelizeOptions {
            mode: FeatureMode::Semantic,
            num_classes: 1,
            unlabeled_as_occupied: false,
        };
        assert!(matches!(
            voxelize(&PointCloud::default(), None, &GridSpec::default(), &opts),
            Err(VoxelError::TooFewClasses(1))
        ));
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| LidarPoint {
                x: rng.random_range(-5.0..65.0),
                y: rng.random_range(-45.0..45.0),
                z: rng.random_range(-3.0..2.0),
                intensity: rng.random_range(0.0..1.0),
            })
            .collect();
        PointCloud::new(points)
    }

    #[test]
    fn occupancy_matches_brute_force_binning() {
        let spec = GridSpec::default();
        let cloud = random_cloud(10_000, 11);
        let grid = voxelize(&cloud, None, &spec, &VoxelizeOptions::default()).unwrap();

        // independent per-point binning oracle
        let cell = spec.cell_size();
        let mut expected: HashMap<(usize, usize, usize), u32> = HashMap::new();
        for p in &cloud.points {
            let coords = [p.x as f64, p.y as f64, p.z as f64];
            let mut ok = true;
            let mut idx = [0usize; 3];
            for i in 0..3 {
                if coords[i] < spec.roi_min[i] || coords[i] > spec.roi_max[i] {
                    ok = false;
                    break;
                }
                idx[i] =
                    (((coords[i] - spec.roi_min[i]) / cell[i]).floor() as usize).min(spec.dims[i] - 1);
            }
            if ok {
                *expected.entry((idx[0], idx[1], idx[2])).or_insert(0) += 1;
            }
        }
        assert_eq!(grid.occupied_cells(), expected.len());
        for (&(i, j, k), _) in &expected {
            assert_eq!(grid.value_at([i, j, k]), 1.0, "cell ({i},{j},{k})");
        }
        let in_roi = expected.values().sum::<u32>() as usize;
        assert!(grid.occupied_cells() <= in_roi);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn voxelization_is_permutation_invariant(seed in 0u64..1000, mode_pick in 0u8..3) {
            let cloud = random_cloud(500, seed);
            let labels: Vec<Option<u8>> = {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
                (0..cloud.len())
                    .map(|_| {
                        if rng.random_bool(0.8) {
                            Some(rng.random_range(0..19u8))
                        } else {
                            None
                        }
                    })
                    .collect()
            };
            let opts = VoxelizeOptions {
                mode: FeatureMode::from_u8(mode_pick).unwrap(),
                num_classes: 19,
                unlabeled_as_occupied: false,
            };
            let spec = GridSpec::default();
            let grid = voxelize(&cloud, Some(&labels), &spec, &opts).unwrap();

            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1234);
            let mut order: Vec<usize> = (0..cloud.len()).collect();
            order.shuffle(&mut rng);
            let shuffled = PointCloud::new(order.iter().map(|&i| cloud.points[i]).collect());
            let shuffled_labels: Vec<Option<u8>> = order.iter().map(|&i| labels[i]).collect();
            let grid2 = voxelize(&shuffled, Some(&shuffled_labels), &spec, &opts).unwrap();
            prop_assert_eq!(&grid.values, &grid2.values);
        }

        #[test]
        fn occupied_values_in_feature_band(seed in 0u64..1000) {
            let cloud = random_cloud(300, seed);
            let labels: Vec<Option<u8>> = (0..cloud.len()).map(|i| Some((i % 19) as u8)).collect();
            for mode in [FeatureMode::Intensity, FeatureMode::Semantic] {
                let opts = VoxelizeOptions {
                    mode,
                    num_classes: 19,
                    unlabeled_as_occupied: false,
                };
                let grid = voxelize(&cloud, Some(&labels), &GridSpec::default(), &opts).unwrap();
                for &v in grid.values.iter().filter(|&&v| v != 0.0) {
                    prop_assert!((1.0..=2.0).contains(&v), "value {} outside [1,2]", v);
                }
            }
        }
    }

    #[test]
    fn rotation_y_round_trip_canonical() {
        let calib = Calibration::sensor_default();
        for yaw in [-3.0, -1.0, 0.0, 0.7, 2.9] {
            let ry = yaw_to_rotation_y(yaw, &calib);
            assert_relative_eq!(ry, wrap_angle(-yaw - std::f64::consts::FRAC_PI_2), epsilon = 1e-12);
            assert_relative_eq!(rotation_y_to_yaw(ry, &calib), yaw, epsilon = 1e-12);
        }
    }
}
