//! Tracking and detection evaluation: CLEAR-MOT, average precision and the
//! point-count detection post-filter.
//!
//! Matching runs natively in 3D on oriented boxes under a pluggable
//! similarity (rotated IoU or the scale-rotation-translation score), with
//! the CLEAR-MOT correspondence-continuity protocol: existing matches stick
//! while still above threshold, the remainder is solved as a minimum-cost
//! assignment.

mod assignment;

pub use assignment::hungarian;
pub(crate) use assignment::FORBIDDEN_COST;

use crate::geometry::{rotated_iou_3d, srts, OrientedBox3D, SrtsParams};
use crate::voxel::PointCloud;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("sequences misaligned: ground truth has {gt} frames, hypotheses {hyp}")]
    Misaligned { gt: usize, hyp: usize },
    #[error("frame mismatch at position {pos}: ground truth frame {gt}, hypothesis frame {hyp}")]
    FrameMismatch { pos: usize, gt: usize, hyp: usize },
    #[error("{side} object in frame {frame} lacks a track id")]
    MissingTrackId { side: &'static str, frame: usize },
    #[error("duplicate {side} track id {id} in frame {frame}")]
    DuplicateTrackId {
        side: &'static str,
        id: i64,
        frame: usize,
    },
    #[error("detection in frame {frame} lacks a score")]
    MissingScore { frame: usize },
    #[error("threshold {0} must lie in [0,1]")]
    BadThreshold(f64),
    #[error("invalid matcher parameters: {0}")]
    BadParams(String),
}

/// One evaluated object: box, class, optional identity and confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub track_id: Option<i64>,
    pub class: String,
    pub bbox: OrientedBox3D,
    pub score: Option<f64>,
}

/// All objects of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameAnnotations {
    pub frame: usize,
    pub objects: Vec<Annotation>,
}

/// Box similarity used for matching.
#[derive(Debug, Clone, PartialEq)]
pub enum Matcher {
    Iou,
    Srts(SrtsParams),
}

impl Matcher {
    /// Similarity in [0,1]; for the asymmetric scale score the ground-truth
    /// box acts as the reference.
    pub fn similarity(&self, gt: &OrientedBox3D, hyp: &OrientedBox3D) -> f64 {
        match self {
            Matcher::Iou => rotated_iou_3d(gt, hyp),
            Matcher::Srts(params) => srts(gt, hyp, params),
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        match self {
            Matcher::Iou => Ok(()),
            Matcher::Srts(params) => params
                .validate()
                .map_err(|e| EvalError::BadParams(e.to_string())),
        }
    }
}

/// CLEAR-MOT summary over a sequence.
///
/// Degenerate denominators resolve to the ideal value: no ground truth
/// means MOTA 1, no matches means MOTP 1, no trajectories means MT 1 / ML 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotReport {
    pub mota: f64,
    pub motp: f64,
    pub mostly_tracked: f64,
    pub mostly_lost: f64,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
    pub matches: usize,
    pub total_ground_truth: usize,
    pub trajectories: usize,
}

impl fmt::Display for MotReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MOTA               {:>10.4}", self.mota)?;
        writeln!(f, "MOTP               {:>10.4}", self.motp)?;
        writeln!(f, "mostly tracked     {:>10.4}", self.mostly_tracked)?;
        writeln!(f, "mostly lost        {:>10.4}", self.mostly_lost)?;
        writeln!(f, "false positives    {:>10}", self.false_positives)?;
        writeln!(f, "misses             {:>10}", self.misses)?;
        writeln!(f, "id switches        {:>10}", self.id_switches)?;
        writeln!(f, "matches            {:>10}", self.matches)?;
        writeln!(f, "ground truth boxes {:>10}", self.total_ground_truth)?;
        write!(f, "trajectories       {:>10}", self.trajectories)
    }
}

/// One point of the precision-recall curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrPoint {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Average precision plus the curve it was integrated from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApReport {
    pub ap: f64,
    pub curve: Vec<PrPoint>,
}

fn check_ids(fa: &FrameAnnotations, side: &'static str) -> Result<Vec<i64>, EvalError> {
    let mut ids = Vec::with_capacity(fa.objects.len());
    let mut seen = std::collections::HashSet::new();
    for obj in &fa.objects {
        let id = obj.track_id.ok_or(EvalError::MissingTrackId {
            side,
            frame: fa.frame,
        })?;
        if !seen.insert(id) {
            return Err(EvalError::DuplicateTrackId {
                side,
                id,
                frame: fa.frame,
            });
        }
        ids.push(id);
    }
    Ok(ids)
}

/// Runs the CLEAR-MOT protocol over two frame-aligned sequences.
///
/// A ground-truth box and a hypothesis may match when classes agree and
/// similarity reaches `threshold`. Matches persist from the previous frame
/// while still valid; the rest is a minimum-cost (1 - similarity)
/// assignment. An id switch is counted when a ground-truth track re-matches
/// under a different hypothesis id than its last one.
pub fn clear_mot(
    gt: &[FrameAnnotations],
    hyp: &[FrameAnnotations],
    matcher: &Matcher,
    threshold: f64,
) -> Result<MotReport, EvalError> {
    matcher.validate()?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EvalError::BadThreshold(threshold));
    }
    if gt.len() != hyp.len() {
        return Err(EvalError::Misaligned {
            gt: gt.len(),
            hyp: hyp.len(),
        });
    }
    for (pos, (g, h)) in gt.iter().zip(hyp).enumerate() {
        if g.frame != h.frame {
            return Err(EvalError::FrameMismatch {
                pos,
                gt: g.frame,
                hyp: h.frame,
            });
        }
    }

    let mut correspondences: BTreeMap<i64, i64> = BTreeMap::new();
    let mut misses = 0usize;
    let mut false_positives = 0usize;
    let mut id_switches = 0usize;
    let mut matches = 0usize;
    let mut similarity_sum = 0.0f64;
    let mut total_gt = 0usize;
    // per ground-truth trajectory: (frames present, frames matched)
    let mut coverage: BTreeMap<i64, (usize, usize)> = BTreeMap::new();

    for (g_frame, h_frame) in gt.iter().zip(hyp) {
        let g_ids = check_ids(g_frame, "ground truth")?;
        let h_ids = check_ids(h_frame, "hypothesis")?;
        total_gt += g_ids.len();
        for &gid in &g_ids {
            coverage.entry(gid).or_insert((0, 0)).0 += 1;
        }

        let sim = |gi: usize, hi: usize| -> f64 {
            let g = &g_frame.objects[gi];
            let h = &h_frame.objects[hi];
            if g.class != h.class {
                return -1.0;
            }
            matcher.similarity(&g.bbox, &h.bbox)
        };

        let mut g_matched = vec![false; g_ids.len()];
        let mut h_matched = vec![false; h_ids.len()];
        let mut frame_pairs: Vec<(usize, usize, f64)> = Vec::new();

        // keep surviving correspondences first
        for (&gid, &hid) in &correspondences {
            let (Some(gi), Some(hi)) = (
                g_ids.iter().position(|&x| x == gid),
                h_ids.iter().position(|&x| x == hid),
            ) else {
                continue;
            };
            if g_matched[gi] || h_matched[hi] {
                continue;
            }
            let s = sim(gi, hi);
            if s >= threshold {
                g_matched[gi] = true;
                h_matched[hi] = true;
                frame_pairs.push((gi, hi, s));
            }
        }

        // assign the rest at minimum cost
        let free_g: Vec<usize> = (0..g_ids.len()).filter(|&i| !g_matched[i]).collect();
        let free_h: Vec<usize> = (0..h_ids.len()).filter(|&i| !h_matched[i]).collect();
        if !free_g.is_empty() && !free_h.is_empty() {
            let cost: Vec<Vec<f64>> = free_g
                .iter()
                .map(|&gi| {
                    free_h
                        .iter()
                        .map(|&hi| {
                            let s = sim(gi, hi);
                            if s >= threshold {
                                1.0 - s
                            } else {
                                FORBIDDEN_COST
                            }
                        })
                        .collect()
                })
                .collect();
            for (row, assigned) in hungarian(&cost).iter().enumerate() {
                if let Some(col) = assigned {
                    let (gi, hi) = (free_g[row], free_h[*col]);
                    let s = sim(gi, hi);
                    g_matched[gi] = true;
                    h_matched[hi] = true;
                    if correspondences.get(&g_ids[gi]).is_some_and(|&prev| prev != h_ids[hi]) {
                        id_switches += 1;
                    }
                    frame_pairs.push((gi, hi, s));
                }
            }
        }

        for &(gi, hi, s) in &frame_pairs {
            correspondences.insert(g_ids[gi], h_ids[hi]);
            coverage.get_mut(&g_ids[gi]).expect("counted above").1 += 1;
            matches += 1;
            similarity_sum += s;
        }
        misses += g_matched.iter().filter(|&&x| !x).count();
        false_positives += h_matched.iter().filter(|&&x| !x).count();
    }

    let trajectories = coverage.len();
    let (mut mostly_tracked, mut mostly_lost) = (0usize, 0usize);
    for &(present, matched) in coverage.values() {
        let ratio = matched as f64 / present as f64;
        if ratio >= 0.8 {
            mostly_tracked += 1;
        } else if ratio <= 0.2 {
            mostly_lost += 1;
        }
    }

    let mota = if total_gt > 0 {
        1.0 - (misses + false_positives + id_switches) as f64 / total_gt as f64
    } else {
        1.0
    };
    let motp = if matches > 0 {
        similarity_sum / matches as f64
    } else {
        1.0
    };
    Ok(MotReport {
        mota,
        motp,
        mostly_tracked: if trajectories > 0 {
            mostly_tracked as f64 / trajectories as f64
        } else {
            1.0
        },
        mostly_lost: if trajectories > 0 {
            mostly_lost as f64 / trajectories as f64
        } else {
            0.0
        },
        false_positives,
        misses,
        id_switches,
        matches,
        total_ground_truth: total_gt,
        trajectories,
    })
}

/// Greedy score-descending detection matching with 40-point interpolated
/// average precision, pooled over classes.
pub fn average_precision(
    detections: &[FrameAnnotations],
    gt: &[FrameAnnotations],
    matcher: &Matcher,
    threshold: f64,
) -> Result<ApReport, EvalError> {
    matcher.validate()?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EvalError::BadThreshold(threshold));
    }
    let gt_by_frame: BTreeMap<usize, &FrameAnnotations> =
        gt.iter().map(|fa| (fa.frame, fa)).collect();
    let total_gt: usize = gt.iter().map(|fa| fa.objects.len()).sum();

    // flatten and sort detections by descending score, ties by position
    let mut dets: Vec<(usize, usize, f64)> = Vec::new();
    for fa in detections {
        for (i, obj) in fa.objects.iter().enumerate() {
            let score = obj.score.ok_or(EvalError::MissingScore { frame: fa.frame })?;
            dets.push((fa.frame, i, score));
        }
    }
    dets.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let det_frames: BTreeMap<usize, &FrameAnnotations> =
        detections.iter().map(|fa| (fa.frame, fa)).collect();
    let mut gt_used: BTreeMap<usize, Vec<bool>> = gt_by_frame
        .iter()
        .map(|(&f, fa)| (f, vec![false; fa.objects.len()]))
        .collect();

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve = Vec::with_capacity(dets.len());
    for &(frame, idx, score) in &dets {
        let det = &det_frames[&frame].objects[idx];
        let mut best: Option<(usize, f64)> = None;
        if let Some(fa) = gt_by_frame.get(&frame) {
            let used = &gt_used[&frame];
            for (gi, g) in fa.objects.iter().enumerate() {
                if used[gi] || g.class != det.class {
                    continue;
                }
                let s = matcher.similarity(&g.bbox, &det.bbox);
                if s >= threshold && best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((gi, s));
                }
            }
        }
        match best {
            Some((gi, _)) => {
                gt_used.get_mut(&frame).expect("frame present")[gi] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push(PrPoint {
            score,
            recall: if total_gt > 0 {
                tp as f64 / total_gt as f64
            } else {
                0.0
            },
            precision: tp as f64 / (tp + fp) as f64,
        });
    }

    let mut ap = 0.0;
    for k in 1..=40 {
        let want_recall = k as f64 / 40.0;
        let p = curve
            .iter()
            .filter(|pt| pt.recall >= want_recall - 1e-12)
            .map(|pt| pt.precision)
            .fold(0.0f64, f64::max);
        ap += p;
    }
    Ok(ApReport {
        ap: ap / 40.0,
        curve,
    })
}

/// Predicate combination for [`point_count_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterCombine {
    /// Remove when sparse AND near (the default reading).
    And,
    /// Remove when sparse OR near.
    Or,
}

/// Removes detections supported by too few lidar points, with the range
/// condition per `combine`: fewer than `min_points` interior points
/// (strictly) and/or center closer than `max_range` meters (strictly) to
/// the sensor origin.
pub fn point_count_filter(
    detections: &FrameAnnotations,
    cloud: &PointCloud,
    min_points: usize,
    max_range: f64,
    combine: FilterCombine,
) -> FrameAnnotations {
    let objects = detections
        .objects
        .iter()
        .filter(|obj| {
            let interior = cloud
                .points
                .iter()
                .filter(|p| obj.bbox.contains([p.x as f64, p.y as f64, p.z as f64]))
                .count();
            let c = obj.bbox.center();
            let range = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            let sparse = interior < min_points;
            let near = range < max_range;
            let remove = match combine {
                FilterCombine::And => sparse && near,
                FilterCombine::Or => sparse || near,
            };
            !remove
        })
        .cloned()
        .collect();
    FrameAnnotations {
        frame: detections.frame,
        objects,
    }
}
