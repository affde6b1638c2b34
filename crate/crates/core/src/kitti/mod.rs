//! Readers and writers for the KITTI dataset formats.
//!
//! Covers object and tracking label files, velodyne point-cloud binaries and
//! calibration files. Label lines are kept verbatim in [`LabelRecord`] so a
//! read-modify-write cycle that touches nothing reproduces our own output
//! byte for byte; conversion into sensor-frame [`Annotation`] boxes happens
//! in a separate, lossy step that drops `DontCare` entries.
//!
//! Labels live in the rectified camera frame (x right, y down, z forward,
//! location at the bottom face center); boxes here use the sensor frame
//! (x forward, y left, z up, center at the volumetric center). All frame
//! changes go through one conversion pair so the two conventions cannot
//! drift apart.

use crate::geometry::{wrap_angle, OrientedBox3D};
use crate::metrics::{Annotation, FrameAnnotations};
use crate::voxel::{
    rotation_y_to_yaw, yaw_to_rotation_y, Calibration, LidarPoint, PointCloud,
};
use nalgebra::{Matrix3, Matrix3x4};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KittiError {
    #[error("line {line}: expected {expected} fields, got {got}")]
    FieldCount {
        line: usize,
        expected: &'static str,
        got: usize,
    },
    #[error("line {line}: cannot parse {field} from {value:?}")]
    Parse {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("record is missing {0} required by the tracking flavor")]
    MissingField(&'static str),
    #[error("calibration key {0:?} not found")]
    MissingKey(String),
    #[error("calibration key {key:?} carries {got} values, expected {expected}")]
    ValueCount {
        key: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid calibration: {0}")]
    Calibration(String),
    #[error("point cloud byte length {0} is not a multiple of 16")]
    TruncatedPointCloud(usize),
}

/// Which label file layout is in play.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelFlavor {
    /// 15 fields (16 with score), no frame or track id.
    Object,
    /// Leading frame and track id, 17 fields (18 with score).
    Tracking,
}

/// One label line, field for field.
///
/// `dimensions` is KITTI order `[h, w, l]` and `location` is the rectified
/// camera-frame bottom-face center, both exactly as read.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub frame: Option<i64>,
    pub track_id: Option<i64>,
    pub class: String,
    pub truncated: f64,
    pub occluded: i64,
    pub alpha: f64,
    pub bbox: [f64; 4],
    pub dimensions: [f64; 3],
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    /// `DontCare` regions and other degenerate entries carry non-positive
    /// dimensions and are excluded from evaluation.
    pub fn is_evaluable(&self) -> bool {
        self.class != "DontCare" && self.dimensions.iter().all(|&d| d > 0.0)
    }
}

fn parse_field<T: std::str::FromStr>(
    tokens: &[&str],
    pos: usize,
    line: usize,
    field: &'static str,
) -> Result<T, KittiError> {
    tokens[pos].parse().map_err(|_| KittiError::Parse {
        line,
        field,
        value: tokens[pos].to_string(),
    })
}

/// Parses a whole label file; blank lines are skipped, line numbers in
/// errors are 1-based.
pub fn read_labels(text: &str, flavor: LabelFlavor) -> Result<Vec<LabelRecord>, KittiError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        let (base, expected) = match flavor {
            LabelFlavor::Object => (0, "15 or 16"),
            LabelFlavor::Tracking => (2, "17 or 18"),
        };
        let body = tokens.len() as i64 - base as i64;
        if body != 15 && body != 16 {
            return Err(KittiError::FieldCount {
                line,
                expected,
                got: tokens.len(),
            });
        }
        let (frame, track_id) = match flavor {
            LabelFlavor::Object => (None, None),
            LabelFlavor::Tracking => (
                Some(parse_field(&tokens, 0, line, "frame")?),
                Some(parse_field(&tokens, 1, line, "track_id")?),
            ),
        };
        let record = LabelRecord {
            frame,
            track_id,
            class: tokens[base].to_string(),
            truncated: parse_field(&tokens, base + 1, line, "truncated")?,
            occluded: parse_field(&tokens, base + 2, line, "occluded")?,
            alpha: parse_field(&tokens, base + 3, line, "alpha")?,
            bbox: [
                parse_field(&tokens, base + 4, line, "bbox_left")?,
                parse_field(&tokens, base + 5, line, "bbox_top")?,
                parse_field(&tokens, base + 6, line, "bbox_right")?,
                parse_field(&tokens, base + 7, line, "bbox_bottom")?,
            ],
            dimensions: [
                parse_field(&tokens, base + 8, line, "height")?,
                parse_field(&tokens, base + 9, line, "width")?,
                parse_field(&tokens, base + 10, line, "length")?,
            ],
            location: [
                parse_field(&tokens, base + 11, line, "x")?,
                parse_field(&tokens, base + 12, line, "y")?,
                parse_field(&tokens, base + 13, line, "z")?,
            ],
            rotation_y: parse_field(&tokens, base + 14, line, "rotation_y")?,
            score: if body == 16 {
                Some(parse_field(&tokens, base + 15, line, "score")?)
            } else {
                None
            },
        };
        out.push(record);
    }
    Ok(out)
}

/// Formats records back into label-file text, floats at 6 decimals.
pub fn write_labels(
    records: &[LabelRecord],
    flavor: LabelFlavor,
) -> Result<String, KittiError> {
    let mut out = String::new();
    for r in records {
        if flavor == LabelFlavor::Tracking {
            let frame = r.frame.ok_or(KittiError::MissingField("frame"))?;
            let track_id = r.track_id.ok_or(KittiError::MissingField("track_id"))?;
            write!(out, "{frame} {track_id} ").unwrap();
        }
        write!(
            out,
            "{} {:.6} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            r.class,
            r.truncated,
            r.occluded,
            r.alpha,
            r.bbox[0],
            r.bbox[1],
            r.bbox[2],
            r.bbox[3],
            r.dimensions[0],
            r.dimensions[1],
            r.dimensions[2],
            r.location[0],
            r.location[1],
            r.location[2],
            r.rotation_y,
        )
        .unwrap();
        if let Some(score) = r.score {
            write!(out, " {score:.6}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Lifts evaluable records into sensor-frame annotations grouped by frame.
///
/// Records without a frame number (object flavor) all land in frame 0.
/// Frames appear sorted and only when they carry at least one record, so a
/// caller that needs a dense frame range must densify on its own.
pub fn annotations_from_records(
    records: &[LabelRecord],
    calib: &Calibration,
) -> Vec<FrameAnnotations> {
    let mut frames: BTreeMap<usize, Vec<Annotation>> = BTreeMap::new();
    for r in records {
        if !r.is_evaluable() {
            continue;
        }
        let [h, w, l] = r.dimensions;
        let center_rect = [r.location[0], r.location[1] - h / 2.0, r.location[2]];
        let center = calib.rect_to_lidar(center_rect);
        let yaw = rotation_y_to_yaw(r.rotation_y, calib);
        let Ok(bbox) = OrientedBox3D::new(center, [l, w, h], yaw) else {
            continue;
        };
        let frame = r.frame.unwrap_or(0).max(0) as usize;
        frames.entry(frame).or_default().push(Annotation {
            track_id: r.track_id,
            class: r.class.clone(),
            bbox,
            score: r.score,
        });
    }
    frames
        .into_iter()
        .map(|(frame, objects)| FrameAnnotations { frame, objects })
        .collect()
}

/// Lowers annotations into tracking-flavor records in the camera frame.
///
/// The 2D bbox is filled with `-1` placeholders, `alpha` is recomputed from
/// the camera-frame location and missing track ids become `-1`.
pub fn records_from_annotations(
    frames: &[FrameAnnotations],
    calib: &Calibration,
) -> Vec<LabelRecord> {
    let mut out = Vec::new();
    for fa in frames {
        for obj in &fa.objects {
            let center = obj.bbox.center();
            let [l, w, h] = obj.bbox.size();
            let rect = calib.lidar_to_rect(center);
            let location = [rect[0], rect[1] + h / 2.0, rect[2]];
            let rotation_y = yaw_to_rotation_y(obj.bbox.yaw(), calib);
            let alpha = wrap_angle(rotation_y - location[0].atan2(location[2]));
            out.push(LabelRecord {
                frame: Some(fa.frame as i64),
                track_id: Some(obj.track_id.unwrap_or(-1)),
                class: obj.class.clone(),
                truncated: 0.0,
                occluded: 0,
                alpha,
                bbox: [-1.0, -1.0, -1.0, -1.0],
                dimensions: [h, w, l],
                location,
                rotation_y,
                score: obj.score,
            });
        }
    }
    out
}

/// Decodes a velodyne `.bin` payload: packed little-endian `f32` quadruples
/// `x y z intensity`.
pub fn read_point_cloud(bytes: &[u8]) -> Result<PointCloud, KittiError> {
    if bytes.len() % 16 != 0 {
        return Err(KittiError::TruncatedPointCloud(bytes.len()));
    }
    let points = bytes
        .chunks_exact(16)
        .map(|c| LidarPoint {
            x: f32::from_le_bytes(c[0..4].try_into().unwrap()),
            y: f32::from_le_bytes(c[4..8].try_into().unwrap()),
            z: f32::from_le_bytes(c[8..12].try_into().unwrap()),
            intensity: f32::from_le_bytes(c[12..16].try_into().unwrap()),
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Inverse of [`read_point_cloud`].
pub fn write_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        out.extend_from_slice(&p.x.to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
        out.extend_from_slice(&p.z.to_le_bytes());
        out.extend_from_slice(&p.intensity.to_le_bytes());
    }
    out
}

fn parse_calib_values(
    key: &str,
    values: &str,
    expected: usize,
) -> Result<Vec<f64>, KittiError> {
    let parsed: Result<Vec<f64>, _> = values.split_whitespace().map(str::parse).collect();
    let parsed = parsed.map_err(|_| KittiError::Calibration(format!(
        "non-numeric value under key {key:?}"
    )))?;
    if parsed.len() != expected {
        return Err(KittiError::ValueCount {
            key: key.to_string(),
            expected,
            got: parsed.len(),
        });
    }
    Ok(parsed)
}

/// Parses a KITTI calibration file, requiring `P2`, `R0_rect` and
/// `Tr_velo_to_cam`. Other keys are ignored.
pub fn read_calibration(text: &str) -> Result<Calibration, KittiError> {
    let mut entries: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines() {
        if let Some((key, rest)) = line.split_once(':') {
            entries.insert(key.trim(), rest.trim());
        }
    }
    let fetch = |key: &str, n: usize| -> Result<Vec<f64>, KittiError> {
        let raw = entries
            .get(key)
            .ok_or_else(|| KittiError::MissingKey(key.to_string()))?;
        parse_calib_values(key, raw, n)
    };
    let p2 = fetch("P2", 12)?;
    let r0 = fetch("R0_rect", 9)?;
    let tr = fetch("Tr_velo_to_cam", 12)?;
    Calibration::new(
        Matrix3x4::from_row_slice(&p2),
        Matrix3::from_row_slice(&r0),
        Matrix3x4::from_row_slice(&tr),
    )
    .map_err(|e| KittiError::Calibration(e.to_string()))
}

/// Serializes a calibration back into the KITTI key layout, using the
/// shortest round-trippable float representation.
pub fn write_calibration(calib: &Calibration) -> String {
    let join = |vals: Vec<f64>| {
        vals.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let p2 = join(calib.projection().transpose().as_slice().to_vec());
    let r0 = join(calib.rectification().transpose().as_slice().to_vec());
    let tr = join(calib.lidar_to_cam().transpose().as_slice().to_vec());
    format!("P2: {p2}\nR0_rect: {r0}\nTr_velo_to_cam: {tr}\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const OBJECT_LINE: &str = "Car 0.00 0 1.85 387.63 181.54 423.81 203.12 1.67 1.87 3.69 -16.53 2.39 58.49 1.57";
    const TRACKING_LINE: &str = "0 2 Pedestrian 0 0 -2.523309 1106.137292 166.576807 1204.470628 323.876144 1.714062 0.767881 0.972283 6.301919 1.652419 8.455685 -1.900245";

    #[test]
    fn parses_object_line() {
        let records = read_labels(OBJECT_LINE, LabelFlavor::Object).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.class, "Car");
        assert_eq!(r.frame, None);
        assert_eq!(r.dimensions, [1.67, 1.87, 3.69]);
        assert_eq!(r.location, [-16.53, 2.39, 58.49]);
        assert_eq!(r.rotation_y, 1.57);
        assert_eq!(r.score, None);
    }

    #[test]
    fn parses_tracking_line_with_ids() {
        let records = read_labels(TRACKING_LINE, LabelFlavor::Tracking).unwrap();
        let r = &records[0];
        assert_eq!(r.frame, Some(0));
        assert_eq!(r.track_id, Some(2));
        assert_eq!(r.class, "Pedestrian");
        assert_eq!(r.occluded, 0);
    }

    #[test]
    fn parses_score_suffix() {
        let line = format!("{OBJECT_LINE} 0.973512");
        let records = read_labels(&line, LabelFlavor::Object).unwrap();
        assert_relative_eq!(records[0].score.unwrap(), 0.973512);
    }

    #[test]
    fn wrong_field_count_is_structured_error() {
        let err = read_labels("Car 0.0 0", LabelFlavor::Object).unwrap_err();
        assert!(matches!(err, KittiError::FieldCount { line: 1, got: 3, .. }));
    }

    #[test]
    fn bad_number_is_structured_error() {
        let line = OBJECT_LINE.replace("58.49", "abc");
        let err = read_labels(&line, LabelFlavor::Object).unwrap_err();
        assert!(matches!(err, KittiError::Parse { field: "z", .. }));
    }

    #[test]
    fn write_then_read_round_trips_bytes() {
        let text = write_labels(
            &read_labels(TRACKING_LINE, LabelFlavor::Tracking).unwrap(),
            LabelFlavor::Tracking,
        )
        .unwrap();
        let records = read_labels(&text, LabelFlavor::Tracking).unwrap();
        let again = write_labels(&records, LabelFlavor::Tracking).unwrap();
        assert_eq!(text, again);
    }

    #[test]
    fn tracking_flavor_requires_ids() {
        let records = read_labels(OBJECT_LINE, LabelFlavor::Object).unwrap();
        assert!(matches!(
            write_labels(&records, LabelFlavor::Tracking),
            Err(KittiError::MissingField("frame"))
        ));
    }

    #[test]
    fn dont_care_records_parse_but_do_not_evaluate() {
        let line = "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10";
        let records = read_labels(line, LabelFlavor::Object).unwrap();
        assert!(!records[0].is_evaluable());
        let frames = annotations_from_records(&records, &Calibration::sensor_default());
        assert!(frames.is_empty());
    }

    #[test]
    fn point_cloud_bytes_are_bit_exact() {
        let bytes: Vec<u8> = [1.0f32, 2.0, 3.0, 0.5]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        assert_eq!(bytes[0..4], [0, 0, 128, 63]);
        let cloud = read_point_cloud(&bytes).unwrap();
        assert_eq!(cloud.points[0].x, 1.0);
        assert_eq!(cloud.points[0].intensity, 0.5);
        assert_eq!(write_point_cloud(&cloud), bytes);
    }

    #[test]
    fn point_cloud_length_must_be_multiple_of_16() {
        assert!(matches!(
            read_point_cloud(&[0u8; 15]),
            Err(KittiError::TruncatedPointCloud(15))
        ));
    }

    #[test]
    fn calibration_round_trip() {
        let calib = Calibration::sensor_default();
        let text = write_calibration(&calib);
        let back = read_calibration(&text).unwrap();
        assert_eq!(calib.projection(), back.projection());
        assert_eq!(calib.rectification(), back.rectification());
        assert_eq!(calib.lidar_to_cam(), back.lidar_to_cam());
    }

    #[test]
    fn calibration_missing_key_is_error() {
        let text = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\n";
        assert!(matches!(
            read_calibration(text),
            Err(KittiError::MissingKey(k)) if k == "Tr_velo_to_cam"
        ));
    }

    #[test]
    fn calibration_value_count_checked() {
        let text = "P2: 1 0 0\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert!(matches!(
            read_calibration(text),
            Err(KittiError::ValueCount { expected: 12, got: 3, .. })
        ));
    }

    #[test]
    fn camera_frame_conversion_round_trips_boxes() {
        let calib = Calibration::sensor_default();
        let bbox = OrientedBox3D::new([12.0, -3.5, -0.4], [4.1, 1.8, 1.6], 0.8).unwrap();
        let frames = vec![FrameAnnotations {
            frame: 3,
            objects: vec![Annotation {
                track_id: Some(7),
                class: "Car".into(),
                bbox,
                score: Some(0.9),
            }],
        }];
        let records = records_from_annotations(&frames, &calib);
        assert_eq!(records[0].frame, Some(3));
        assert_eq!(records[0].dimensions, [1.6, 1.8, 4.1]);
        let back = annotations_from_records(&records, &calib);
        assert_eq!(back.len(), 1);
        let got = &back[0].objects[0];
        assert_eq!(back[0].frame, 3);
        assert_eq!(got.track_id, Some(7));
        for i in 0..3 {
            assert_relative_eq!(got.bbox.center()[i], bbox.center()[i], epsilon = 1e-9);
            assert_relative_eq!(got.bbox.size()[i], bbox.size()[i], epsilon = 1e-9);
        }
        assert_relative_eq!(got.bbox.yaw(), bbox.yaw(), epsilon = 1e-9);
    }

    #[test]
    fn conversion_matches_known_kitti_convention() {
        // heading straight along sensor x maps to rotation_y = -pi/2 under the
        // canonical axis permutation
        let calib = Calibration::sensor_default();
        let bbox = OrientedBox3D::new([10.0, 0.0, 0.0], [4.0, 2.0, 1.5], 0.0).unwrap();
        let frames = vec![FrameAnnotations {
            frame: 0,
            objects: vec![Annotation {
                track_id: Some(0),
                class: "Car".into(),
                bbox,
                score: None,
            }],
        }];
        let r = &records_from_annotations(&frames, &calib)[0];
        assert_relative_eq!(r.rotation_y, -std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        // bottom face: center z_up = 0, h = 1.5, camera y is down, so the
        // bottom sits at y = 0.75
        assert_relative_eq!(r.location[1], 0.75, epsilon = 1e-12);
        assert_relative_eq!(r.location[2], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn fuzzed_label_lines_never_panic() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let base = format!("{TRACKING_LINE} 0.5\n{OBJECT_LINE}\n\n");
        for _ in 0..1000 {
            let mut mutated: Vec<u8> = base.clone().into_bytes();
            for _ in 0..rng.random_range(1..8) {
                let i = rng.random_range(0..mutated.len());
                match rng.random_range(0..3) {
                    0 => {
                        mutated[i] = rng.random_range(32..127);
                    }
                    1 => {
                        mutated.remove(i);
                    }
                    _ => {
                        mutated.insert(i, rng.random_range(32..127));
                    }
                }
            }
            if let Ok(text) = String::from_utf8(mutated) {
                for flavor in [LabelFlavor::Object, LabelFlavor::Tracking] {
                    let _ = read_labels(&text, flavor);
                }
                let _ = read_calibration(&text);
            }
        }
    }

    #[test]
    fn fuzzed_point_clouds_never_panic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let len = rng.random_range(0..200);
            let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let _ = read_point_cloud(&bytes);
        }
    }
}
