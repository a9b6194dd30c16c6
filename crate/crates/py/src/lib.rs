//! Python bindings. Points cross the boundary as `(x, y, z)` tuples and
//! structured results as plain dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyAny;

use fsp_core::background::{extract_foreground, BackgroundMap, ForegroundParams};
use fsp_core::cloud::{build_rotation, correct_frame, voxel_downsample, PointCloudFrame, TiltAngles, VoxelParams};
use fsp_core::cluster::{classify_vehicle, cluster_features, dbscan, ClassifierThresholds, DbscanParams};
use fsp_core::eval::{compute_metrics, ConfusionCounts};
use fsp_core::geo::{
    self, estimate_static_extrinsic, CorrespondenceSet, EnuCoord, GeodeticCoord, RigidTransform3D,
};
use fsp_core::io::read_frame_dir;
use fsp_core::pipeline::synth::{synth_scene, SynthSceneParams};
use fsp_core::pipeline::{self as core_pipeline, ExtrinsicArtifact, Geolocation, PipelineConfig};
use fsp_core::Point3;

create_exception!(fsp_lidar, FspError, PyException, "Error raised by the FSP pipeline.");

fn err(e: impl std::fmt::Display) -> PyErr {
    FspError::new_err(e.to_string())
}

type Xyz = (f64, f64, f64);

fn to_points(v: Vec<Xyz>) -> Vec<Point3> {
    v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect()
}

fn from_points(v: &[Point3]) -> Vec<Xyz> {
    v.iter().map(|p| (p.x, p.y, p.z)).collect()
}

/// Round-trips a serializable value through Python's `json.loads`.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "GeodeticCoord", from_py_object)]
#[derive(Clone, Copy)]
struct PyGeodetic(GeodeticCoord);

#[pymethods]
impl PyGeodetic {
    #[new]
    fn new(lat: f64, lon: f64, alt: f64) -> PyResult<Self> {
        GeodeticCoord::new(lat, lon, alt).map(Self).map_err(err)
    }
    #[getter]
    fn lat(&self) -> f64 {
        self.0.latitude_deg
    }
    #[getter]
    fn lon(&self) -> f64 {
        self.0.longitude_deg
    }
    #[getter]
    fn alt(&self) -> f64 {
        self.0.altitude_m
    }
    fn to_ecef(&self) -> Xyz {
        let p = self.0.to_ecef();
        (p.x, p.y, p.z)
    }
    fn __repr__(&self) -> String {
        format!("GeodeticCoord({}, {}, {})", self.0.latitude_deg, self.0.longitude_deg, self.0.altitude_m)
    }
}

/// Local east-north-up frame anchored at a geodetic origin.
#[pyclass(name = "EnuReference")]
struct PyEnuReference(geo::EnuReference);

#[pymethods]
impl PyEnuReference {
    #[new]
    fn new(origin: PyGeodetic) -> PyResult<Self> {
        geo::EnuReference::new(origin.0).map(Self).map_err(err)
    }
    fn to_enu(&self, g: PyGeodetic) -> PyResult<Xyz> {
        let e = geo::geodetic_to_enu(&g.0, &self.0).map_err(err)?;
        Ok((e.east, e.north, e.up))
    }
    fn to_geodetic(&self, enu: Xyz) -> PyResult<PyGeodetic> {
        geo::enu_to_geodetic(&EnuCoord::new(enu.0, enu.1, enu.2), &self.0)
            .map(PyGeodetic)
            .map_err(err)
    }
}

#[pyclass(name = "RigidTransform", from_py_object)]
#[derive(Clone)]
struct PyRigidTransform(RigidTransform3D);

#[pymethods]
impl PyRigidTransform {
    #[new]
    #[pyo3(signature = (rotation = None, translation = (0.0, 0.0, 0.0)))]
    fn new(rotation: Option<[f64; 9]>, translation: Xyz) -> PyResult<Self> {
        let r = rotation.unwrap_or([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        RigidTransform3D::from_row_major(&r, &[translation.0, translation.1, translation.2])
            .map(Self)
            .map_err(err)
    }
    /// Row-major 3×3 rotation.
    #[getter]
    fn rotation(&self) -> [f64; 9] {
        self.0.rotation_row_major()
    }
    #[getter]
    fn translation(&self) -> Xyz {
        let t = self.0.translation;
        (t.x, t.y, t.z)
    }
    fn apply(&self, points: Vec<Xyz>) -> Vec<Xyz> {
        from_points(&to_points(points).iter().map(|p| self.0.apply(p)).collect::<Vec<_>>())
    }
    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }
    /// `self ∘ other`: applies `other` first.
    fn compose(&self, other: &Self) -> Self {
        Self(self.0.compose(&other.0))
    }
}

/// Levels points with the mounting tilt (radians).
#[pyfunction]
fn correct_tilt(points: Vec<Xyz>, roll: f64, pitch: f64) -> PyResult<Vec<Xyz>> {
    let rot = build_rotation(&TiltAngles::new(roll, pitch).map_err(err)?).map_err(err)?;
    let frame = PointCloudFrame::new(0, 0.0, to_points(points)).map_err(err)?;
    Ok(from_points(&correct_frame(&frame, &rot).map_err(err)?.points))
}

#[pyfunction]
fn downsample(points: Vec<Xyz>, voxel_size: f64) -> PyResult<Vec<Xyz>> {
    let frame = PointCloudFrame::new(0, 0.0, to_points(points)).map_err(err)?;
    let params = VoxelParams::new(voxel_size).map_err(err)?;
    Ok(from_points(&voxel_downsample(&frame, &params).map_err(err)?.points))
}

/// Returns `(foreground_points, tau)`.
#[pyfunction]
#[pyo3(signature = (points, background, alpha = 2.0))]
fn foreground(points: Vec<Xyz>, background: Vec<Xyz>, alpha: f64) -> PyResult<(Vec<Xyz>, f64)> {
    let map = BackgroundMap::from_points(to_points(background), 0.0, vec![]).map_err(err)?;
    let frame = PointCloudFrame::new(0, 0.0, to_points(points)).map_err(err)?;
    let params = ForegroundParams { alpha, clamp: None };
    let fg = extract_foreground(&frame, &map, &params).map_err(err)?;
    Ok((from_points(&fg.frame.points), fg.stats.threshold))
}

/// Cluster label per point, `None` for noise.
#[pyfunction(name = "dbscan")]
#[pyo3(signature = (points, epsilon = 0.8, min_pts = 8))]
fn py_dbscan(py: Python<'_>, points: Vec<Xyz>, epsilon: f64, min_pts: usize) -> PyResult<Vec<Option<usize>>> {
    let params = DbscanParams::new(epsilon, min_pts).map_err(err)?;
    let pts = to_points(points);
    py.detach(|| dbscan(&pts, &params)).map(|c| c.labels).map_err(err)
}

/// Feature dict plus `vehicle_class` for one cluster.
#[pyfunction]
#[pyo3(signature = (points, ground_z = -6.0))]
fn classify_cluster<'py>(py: Python<'py>, points: Vec<Xyz>, ground_z: f64) -> PyResult<Bound<'py, PyAny>> {
    let c = cluster_features(to_points(points)).map_err(err)?;
    let class = classify_vehicle(&c, &ClassifierThresholds::for_ground(ground_z));
    to_py(
        py,
        &serde_json::json!({
            "centroid": [c.centroid.x, c.centroid.y, c.centroid.z],
            "hmax": c.hmax,
            "sigma_z": c.sigma_z,
            "abs_height": c.abs_height,
            "extent_xy": [c.extent_xy.0, c.extent_xy.1],
            "vehicle_class": class,
        }),
    )
}

/// Rigid LiDAR→ENU fit; returns `(transform, per_point_residuals)`.
#[pyfunction]
fn register_static(lidar: Vec<Xyz>, enu: Vec<Xyz>) -> PyResult<(PyRigidTransform, Vec<f64>)> {
    if lidar.len() != enu.len() {
        return Err(err(format!("{} lidar points but {} ENU points", lidar.len(), enu.len())));
    }
    let pairs = to_points(lidar)
        .into_iter()
        .zip(enu)
        .map(|(l, (e, n, u))| (l, EnuCoord::new(e, n, u)))
        .collect();
    let set = CorrespondenceSet::new(pairs).map_err(err)?;
    let reg = estimate_static_extrinsic(&set).map_err(err)?;
    Ok((PyRigidTransform(reg.transform), reg.residuals.per_point))
}

/// Precision, recall and F1 from confusion counts; undefined values are `None`.
#[pyfunction]
fn fsp_metrics<'py>(py: Python<'py>, tp: u64, fp: u64, fn_: u64, tn: u64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &compute_metrics(&ConfusionCounts::new(tp, fp, fn_, tn)))
}

/// Writes a synthetic scene; `params` is a dict in the `synth` CLI format.
#[pyfunction]
fn synthesize<'py>(py: Python<'py>, params: &Bound<'py, PyAny>, out_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let text: String = py.import("json")?.call_method1("dumps", (params,))?.extract()?;
    let p: SynthSceneParams = serde_json::from_str(&text).map_err(err)?;
    let scene = py.detach(|| synth_scene(&p, &out_dir)).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "frames": scene.frames_dir,
            "background": scene.background_dir,
            "ground_truth": scene.ground_truth,
            "config": scene.config,
            "truck_tracks": scene.truck_tracks,
        }),
    )
}

/// Streaming detector over in-memory frames.
#[pyclass(name = "Pipeline", unsendable)]
struct PyPipeline(core_pipeline::Pipeline);

#[pymethods]
impl PyPipeline {
    #[new]
    #[pyo3(signature = (config_path, background_path, extrinsic_path = None))]
    fn new(config_path: PathBuf, background_path: PathBuf, extrinsic_path: Option<PathBuf>) -> PyResult<Self> {
        let cfg = PipelineConfig::load(&config_path).map_err(err)?;
        let map = BackgroundMap::load(&background_path).map_err(err)?;
        let geo = match extrinsic_path.or_else(|| cfg.extrinsic_path.clone()) {
            Some(p) => Some(
                Geolocation::from_artifact(&ExtrinsicArtifact::load(&p).map_err(err)?).map_err(err)?,
            ),
            None => None,
        };
        core_pipeline::Pipeline::new(cfg, map, geo).map(Self).map_err(err)
    }

    /// Processes one frame and returns its detection records as dicts.
    fn process_frame<'py>(
        &mut self,
        py: Python<'py>,
        frame_id: u64,
        timestamp: f64,
        points: Vec<Xyz>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let frame = PointCloudFrame::new(frame_id, timestamp, to_points(points)).map_err(err)?;
        let out = self.0.process_frame(&frame).map_err(err)?;
        to_py(py, &out.records)
    }
}

/// Builds and saves a background map from a directory of vehicle-free frames.
#[pyfunction]
fn build_background(py: Python<'_>, config_path: PathBuf, frames_dir: PathBuf, out: PathBuf) -> PyResult<usize> {
    py.detach(|| {
        let cfg = PipelineConfig::load(&config_path)?;
        let stream = read_frame_dir(&frames_dir)?;
        let map = core_pipeline::build_background_from_frames(&cfg, &stream.frames)?;
        map.save(&out)?;
        Ok::<_, fsp_core::Error>(map.len())
    })
    .map_err(err)
}

/// Runs detection over a frame directory; returns `(records, summary)`.
#[pyfunction]
#[pyo3(signature = (config_path, frames_dir, background_path, extrinsic_path = None))]
fn detect<'py>(
    py: Python<'py>,
    config_path: PathBuf,
    frames_dir: PathBuf,
    background_path: PathBuf,
    extrinsic_path: Option<PathBuf>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let out = py
        .detach(|| {
            let cfg = PipelineConfig::load(&config_path)?;
            let map = BackgroundMap::load(&background_path)?;
            let geo = match extrinsic_path.as_ref().or(cfg.extrinsic_path.as_ref()) {
                Some(p) => Some(Geolocation::from_artifact(&ExtrinsicArtifact::load(p)?)?),
                None => None,
            };
            let stream = read_frame_dir(&frames_dir)?;
            core_pipeline::run_detect(&cfg, &stream, map, geo)
        })
        .map_err(err)?;
    Ok((to_py(py, &out.records)?, to_py(py, &out.summary)?))
}

#[pymodule]
fn fsp_lidar(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FspError", m.py().get_type::<FspError>())?;
    m.add_class::<PyGeodetic>()?;
    m.add_class::<PyEnuReference>()?;
    m.add_class::<PyRigidTransform>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(correct_tilt, m)?)?;
    m.add_function(wrap_pyfunction!(downsample, m)?)?;
    m.add_function(wrap_pyfunction!(foreground, m)?)?;
    m.add_function(wrap_pyfunction!(py_dbscan, m)?)?;
    m.add_function(wrap_pyfunction!(classify_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(register_static, m)?)?;
    m.add_function(wrap_pyfunction!(fsp_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(build_background, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    Ok(())
}
