//! Python bindings for the tracking toolkit.
//!
//! Exposes oriented boxes, the SRTs similarity and exact rotated IoU, the
//! multi-Bernoulli cardinality distribution, the LMB tracking filter, the
//! point-cloud voxelizer, and the CLEAR-MOT / average-precision evaluators.
//! Inputs are plain Python tuples, lists, and dicts; no NumPy dependency.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use srtrack_core::geometry::{self, GeometryError, OrientedBox3D, SrtsParams};
use srtrack_core::lmb::{self, FilterConfig, FilterError, Label, LmbFilter, Measurement};
use srtrack_core::metrics::{self, Annotation, EvalError, FrameAnnotations, Matcher};
use srtrack_core::voxel::{self, FeatureMode, GridSpec, LidarPoint, PointCloud, VoxelizeOptions};

/// `(track_id, class, center, size, yaw)` annotation tuple.
type ObjTuple = (i64, String, [f64; 3], [f64; 3], f64);
/// `ObjTuple` plus a trailing detection score.
type DetTuple = (i64, String, [f64; 3], [f64; 3], f64, f64);
/// `(center, size, yaw, class, score)` measurement tuple.
type MeasTuple = ([f64; 3], [f64; 3], f64, String, f64);

fn geom_err(e: GeometryError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn filter_err(e: FilterError) -> PyErr {
    match e {
        FilterError::Conditioning(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn eval_err(e: EvalError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// An oriented 3D bounding box: center, size, and yaw about the z axis.
#[pyclass(name = "OrientedBox3D", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBox {
    inner: OrientedBox3D,
}

#[pymethods]
impl PyBox {
    #[new]
    fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> PyResult<Self> {
        Ok(Self {
            inner: OrientedBox3D::new(center, size, yaw).map_err(geom_err)?,
        })
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.inner.center()
    }

    #[getter]
    fn size(&self) -> [f64; 3] {
        self.inner.size()
    }

    #[getter]
    fn yaw(&self) -> f64 {
        self.inner.yaw()
    }

    /// Axis-aligned bounds as `(min, max)` corners.
    fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        self.inner.aabb()
    }

    /// Euclidean distance between box centers.
    fn center_distance(&self, other: &Self) -> f64 {
        self.inner.center_distance(&other.inner)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.center();
        let s = self.inner.size();
        format!(
            "OrientedBox3D(center=({:.3}, {:.3}, {:.3}), size=({:.3}, {:.3}, {:.3}), yaw={:.3})",
            c[0], c[1], c[2], s[0], s[1], s[2], self.inner.yaw()
        )
    }
}

/// Strictness and weight parameters of the SRTs similarity.
#[pyclass(name = "SrtsParams", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: SrtsParams,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (w_s=0.3, w_t=1.0, w_r=0.5, alpha=0.3, beta=0.3, gamma=0.4,
                        symmetric_scale=false))]
    fn new(
        w_s: f64,
        w_t: f64,
        w_r: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        symmetric_scale: bool,
    ) -> PyResult<Self> {
        let inner = SrtsParams {
            w_s,
            w_t,
            w_r,
            alpha,
            beta,
            gamma,
            symmetric_scale,
        };
        inner.validate().map_err(geom_err)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "SrtsParams(w_s={}, w_t={}, w_r={}, alpha={}, beta={}, gamma={})",
            p.w_s, p.w_t, p.w_r, p.alpha, p.beta, p.gamma
        )
    }
}

/// SRTs similarity of two oriented boxes, in `[0, 1]`.
#[pyfunction]
#[pyo3(signature = (a, b, params=None))]
fn srts(a: PyRef<'_, PyBox>, b: PyRef<'_, PyBox>, params: Option<PyRef<'_, PyParams>>) -> f64 {
    let p = params.map_or_else(SrtsParams::default, |p| p.inner.clone());
    geometry::srts(&a.inner, &b.inner, &p)
}

/// Exact intersection-over-union of two oriented boxes.
#[pyfunction]
fn rotated_iou_3d(a: PyRef<'_, PyBox>, b: PyRef<'_, PyBox>) -> f64 {
    geometry::rotated_iou_3d(&a.inner, &b.inner)
}

/// Cardinality distribution of independent Bernoulli existences.
#[pyfunction]
fn cardinality_distribution(existences: Vec<f64>) -> PyResult<Vec<f64>> {
    lmb::cardinality_distribution(&existences).map_err(filter_err)
}

fn config_from_kwargs(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<FilterConfig> {
    let mut value = serde_json::to_value(FilterConfig::default())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let map = value.as_object_mut().expect("config serializes to a map");
    if let Some(kwargs) = kwargs {
        for (key, item) in kwargs.iter() {
            let key: String = key.extract()?;
            if !map.contains_key(&key) {
                return Err(PyValueError::new_err(format!("unknown config field {key:?}")));
            }
            let json = if let Ok(xs) = item.extract::<Vec<f64>>() {
                serde_json::Value::Array(
                    xs.into_iter()
                        .map(|x| {
                            serde_json::Number::from_f64(x).map(serde_json::Value::Number).ok_or_else(
                                || PyValueError::new_err(format!("non-finite value in {key:?}")),
                            )
                        })
                        .collect::<PyResult<_>>()?,
                )
            } else {
                let x: f64 = item.extract()?;
                serde_json::Number::from_f64(x)
                    .map(serde_json::Value::Number)
                    .ok_or_else(|| PyValueError::new_err(format!("non-finite value for {key:?}")))?
            };
            map.insert(key, json);
        }
    }
    serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Labeled multi-Bernoulli tracking filter over oriented-box detections.
#[pyclass(name = "LmbFilter")]
struct PyFilter {
    inner: LmbFilter,
    ids: BTreeMap<Label, i64>,
}

#[pymethods]
impl PyFilter {
    /// Create a filter; keyword arguments override individual config fields.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let config = config_from_kwargs(kwargs)?;
        Ok(Self {
            inner: LmbFilter::new(config).map_err(filter_err)?,
            ids: BTreeMap::new(),
        })
    }

    /// Advance one frame and return the extracted tracks as dicts.
    ///
    /// Each measurement is `(center, size, yaw, class, score)`; each returned
    /// track carries a stable integer `id` plus box, class, existence, age.
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        measurements: Vec<MeasTuple>,
        dt: f64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let measurements: Vec<Measurement> = measurements
            .into_iter()
            .map(|(center, size, yaw, class, score)| {
                let bbox = OrientedBox3D::new(center, size, yaw).map_err(geom_err)?;
                Measurement::new(bbox, class, score).map_err(filter_err)
            })
            .collect::<PyResult<_>>()?;
        let tracks = self.inner.step(&measurements, dt).map_err(filter_err)?;
        tracks
            .iter()
            .map(|t| {
                let next = self.ids.len() as i64;
                let id = *self.ids.entry(t.label).or_insert(next);
                let bbox = t.bbox();
                let out = PyDict::new(py);
                out.set_item("id", id)?;
                out.set_item("class", &t.class)?;
                out.set_item("center", bbox.center())?;
                out.set_item("size", bbox.size())?;
                out.set_item("yaw", bbox.yaw())?;
                out.set_item("existence", t.existence)?;
                out.set_item("age", t.age)?;
                Ok(out)
            })
            .collect()
    }
}

fn parse_mode(mode: &str) -> PyResult<FeatureMode> {
    match mode {
        "occupancy" => Ok(FeatureMode::Occupancy),
        "intensity" => Ok(FeatureMode::Intensity),
        "semantic" => Ok(FeatureMode::Semantic),
        other => Err(PyValueError::new_err(format!(
            "mode must be occupancy, intensity, or semantic, got {other:?}"
        ))),
    }
}

/// Voxelize `(x, y, z, intensity)` points into a sparse feature grid.
///
/// Returns a dict with `dims`, `cell_size`, and `cells`, the occupied cells
/// as `((ix, iy, iz), value)` pairs in x-major order.
#[pyfunction]
#[pyo3(signature = (points, labels=None, mode="occupancy", num_classes=19,
                    roi_min=None, roi_max=None, dims=None))]
#[allow(clippy::too_many_arguments)]
fn voxelize<'py>(
    py: Python<'py>,
    points: Vec<[f64; 4]>,
    labels: Option<Vec<Option<u8>>>,
    mode: &str,
    num_classes: usize,
    roi_min: Option<[f64; 3]>,
    roi_max: Option<[f64; 3]>,
    dims: Option<[usize; 3]>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut spec = GridSpec::default();
    if let Some(v) = roi_min {
        spec.roi_min = v;
    }
    if let Some(v) = roi_max {
        spec.roi_max = v;
    }
    if let Some(v) = dims {
        spec.dims = v;
    }
    let opts = VoxelizeOptions {
        mode: parse_mode(mode)?,
        num_classes,
        ..VoxelizeOptions::default()
    };
    let cloud = PointCloud {
        points: points
            .iter()
            .map(|p| LidarPoint {
                x: p[0] as f32,
                y: p[1] as f32,
                z: p[2] as f32,
                intensity: p[3] as f32,
            })
            .collect(),
    };
    let grid = voxel::voxelize(&cloud, labels.as_deref(), &spec, &opts)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let [_, dy, dz] = grid.spec.dims;
    let cells: Vec<((usize, usize, usize), f32)> = grid
        .values
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v != 0.0)
        .map(|(flat, &v)| ((flat / (dy * dz), flat / dz % dy, flat % dz), v))
        .collect();
    let out = PyDict::new(py);
    out.set_item("dims", grid.spec.dims)?;
    out.set_item("cell_size", grid.spec.cell_size())?;
    out.set_item("mode", mode)?;
    out.set_item("cells", cells)?;
    Ok(out)
}

fn parse_matcher(matcher: &str, params: Option<PyRef<'_, PyParams>>) -> PyResult<Matcher> {
    match matcher {
        "iou" => Ok(Matcher::Iou),
        "srts" => Ok(Matcher::Srts(
            params.map_or_else(SrtsParams::default, |p| p.inner.clone()),
        )),
        other => Err(PyValueError::new_err(format!(
            "matcher must be iou or srts, got {other:?}"
        ))),
    }
}

fn frames_from_objects(
    frames: Vec<Vec<ObjTuple>>,
    scores: Option<&[Vec<f64>]>,
) -> PyResult<Vec<FrameAnnotations>> {
    frames
        .into_iter()
        .enumerate()
        .map(|(frame, objects)| {
            let objects = objects
                .into_iter()
                .enumerate()
                .map(|(i, (id, class, center, size, yaw))| {
                    Ok(Annotation {
                        track_id: Some(id),
                        class,
                        bbox: OrientedBox3D::new(center, size, yaw).map_err(geom_err)?,
                        score: scores.map(|s| s[frame][i]),
                    })
                })
                .collect::<PyResult<_>>()?;
            Ok(FrameAnnotations { frame, objects })
        })
        .collect()
}

/// CLEAR-MOT scores of a tracking hypothesis against ground truth.
///
/// Both sequences are per-frame lists of `(track_id, class, center, size,
/// yaw)` tuples; frame `k` of one sequence is compared with frame `k` of the
/// other.
#[pyfunction]
#[pyo3(signature = (gt, hyp, matcher="iou", threshold=0.5, params=None))]
fn clear_mot<'py>(
    py: Python<'py>,
    gt: Vec<Vec<ObjTuple>>,
    hyp: Vec<Vec<ObjTuple>>,
    matcher: &str,
    threshold: f64,
    params: Option<PyRef<'_, PyParams>>,
) -> PyResult<Bound<'py, PyDict>> {
    let matcher = parse_matcher(matcher, params)?;
    let gt = frames_from_objects(gt, None)?;
    let hyp = frames_from_objects(hyp, None)?;
    let r = metrics::clear_mot(&gt, &hyp, &matcher, threshold).map_err(eval_err)?;
    let out = PyDict::new(py);
    out.set_item("mota", r.mota)?;
    out.set_item("motp", r.motp)?;
    out.set_item("mostly_tracked", r.mostly_tracked)?;
    out.set_item("mostly_lost", r.mostly_lost)?;
    out.set_item("false_positives", r.false_positives)?;
    out.set_item("misses", r.misses)?;
    out.set_item("id_switches", r.id_switches)?;
    out.set_item("matches", r.matches)?;
    out.set_item("total_ground_truth", r.total_ground_truth)?;
    out.set_item("trajectories", r.trajectories)?;
    Ok(out)
}

/// 40-point interpolated average precision of scored detections.
///
/// Detections are `(track_id, class, center, size, yaw, score)` tuples; the
/// ground truth omits the score. Returns the AP plus the precision-recall
/// curve as `(score, recall, precision)` rows.
#[pyfunction]
#[pyo3(signature = (detections, gt, matcher="iou", threshold=0.5, params=None))]
fn average_precision<'py>(
    py: Python<'py>,
    detections: Vec<Vec<DetTuple>>,
    gt: Vec<Vec<ObjTuple>>,
    matcher: &str,
    threshold: f64,
    params: Option<PyRef<'_, PyParams>>,
) -> PyResult<Bound<'py, PyDict>> {
    let matcher = parse_matcher(matcher, params)?;
    let mut scores = Vec::with_capacity(detections.len());
    let mut objects = Vec::with_capacity(detections.len());
    for frame in detections {
        scores.push(frame.iter().map(|d| d.5).collect::<Vec<f64>>());
        objects.push(
            frame
                .into_iter()
                .map(|(id, class, center, size, yaw, _)| (id, class, center, size, yaw))
                .collect::<Vec<ObjTuple>>(),
        );
    }
    let detections = frames_from_objects(objects, Some(&scores))?;
    let gt = frames_from_objects(gt, None)?;
    let r = metrics::average_precision(&detections, &gt, &matcher, threshold).map_err(eval_err)?;
    let curve: Vec<(f64, f64, f64)> = r
        .curve
        .iter()
        .map(|p| (p.score, p.recall, p.precision))
        .collect();
    let out = PyDict::new(py);
    out.set_item("ap", r.ap)?;
    out.set_item("curve", curve)?;
    Ok(out)
}

#[pymodule]
fn srtrack(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyFilter>()?;
    m.add_function(wrap_pyfunction!(srts, m)?)?;
    m.add_function(wrap_pyfunction!(rotated_iou_3d, m)?)?;
    m.add_function(wrap_pyfunction!(cardinality_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(voxelize, m)?)?;
    m.add_function(wrap_pyfunction!(clear_mot, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    Ok(())
}
