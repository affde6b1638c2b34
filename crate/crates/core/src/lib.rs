//! 3D multi-object tracking toolkit built around oriented boxes.
//!
//! The crate provides the detector-independent pieces of a lidar tracking
//! pipeline:
//!
//! * [`geometry`]: oriented 3D boxes, the SRT similarity score and an exact
//!   rotated-IoU oracle,
//! * [`voxel`]: semantic point-cloud voxelization over a fixed ROI grid,
//! * [`lmb`]: a labeled multi-Bernoulli multi-target filter with
//!   coordinated-turn dynamics,
//! * [`metrics`]: CLEAR-MOT and average-precision evaluation plus the
//!   point-count detection post-filter,
//! * [`sim`]: a seedable scenario generator producing ground truth and noisy
//!   detection streams,
//! * [`kitti`]: bit-exact readers and writers for the KITTI file formats.

pub mod geometry;
pub mod kitti;
pub mod lmb;
pub mod metrics;
pub mod sim;
pub mod voxel;

pub use geometry::{rotated_iou_3d, srts, OrientedBox3D, SrtsParams};
pub use lmb::{FilterConfig, LmbFilter, Measurement, Track};
pub use metrics::{Annotation, FrameAnnotations, Matcher, MotReport};
pub use voxel::{Calibration, FeatureMode, GridSpec, PointCloud, SemanticMap, VoxelGrid};
