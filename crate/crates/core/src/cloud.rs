//! Geometric preprocessing of raw frames: tilt correction, ROI cropping and
//! voxel-grid downsampling.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::Point3;

/// Coordinate frame a [`PointCloudFrame`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameTag {
    SensorFrame,
    LeveledFrame,
    EnuFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudFrame {
    pub frame_id: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub points: Vec<Point3>,
    pub tag: FrameTag,
}

impl PointCloudFrame {
    /// Builds a sensor-frame cloud, rejecting non-finite coordinates.
    pub fn new(frame_id: u64, timestamp: f64, points: Vec<Point3>) -> Result<Self> {
        Self::with_tag(frame_id, timestamp, points, FrameTag::SensorFrame)
    }

    pub fn with_tag(frame_id: u64, timestamp: f64, points: Vec<Point3>, tag: FrameTag) -> Result<Self> {
        if !timestamp.is_finite() {
            return Err(Error::invalid(format!("frame {frame_id}: non-finite timestamp")));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("frame {frame_id}: point {i} is not finite")));
        }
        Ok(Self {
            frame_id,
            timestamp,
            points,
            tag,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same metadata, new point list.
    pub(crate) fn replace_points(&self, points: Vec<Point3>) -> Self {
        Self {
            frame_id: self.frame_id,
            timestamp: self.timestamp,
            points,
            tag: self.tag,
        }
    }
}

/// Mounting roll and pitch of the sensor, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiltAngles {
    pub roll: f64,
    pub pitch: f64,
}

impl TiltAngles {
    pub fn new(roll: f64, pitch: f64) -> Result<Self> {
        let angles = Self { roll, pitch };
        angles.validate()?;
        Ok(angles)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("roll", self.roll), ("pitch", self.pitch)] {
            // FRAC_PI_2 rounds below the real pi/2, so `<=` keeps the open interval
            if !(v.is_finite() && v.abs() <= FRAC_PI_2) {
                return Err(Error::invalid(format!("{name} {v} rad outside (-pi/2, pi/2)")));
            }
        }
        Ok(())
    }
}

/// A proper rotation (orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and determinant to `tol`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !(ortho <= tol && (det - 1.0).abs() <= tol) {
            return Err(Error::invalid(format!(
                "not a rotation: |R^T R - I| = {ortho:e}, det = {det}"
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from_vector(&(self.0 * p.to_vector()))
    }

    pub fn apply_transpose(&self, p: &Point3) -> Point3 {
        Point3::from_vector(&(self.0.tr_mul(&p.to_vector())))
    }
}

/// `R = R_y(pitch) · R_x(roll)`.
pub fn build_rotation(angles: &TiltAngles) -> Result<Rotation3> {
    angles.validate()?;
    let (sr, cr) = angles.roll.sin_cos();
    let (sp, cp) = angles.pitch.sin_cos();
    #[rustfmt::skip]
    let rx = Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, cr, -sr,
        0.0, sr, cr,
    );
    #[rustfmt::skip]
    let ry = Matrix3::new(
        cp, 0.0, sp,
        0.0, 1.0, 0.0,
        -sp, 0.0, cp,
    );
    Ok(Rotation3(ry * rx))
}

/// Levels a sensor-frame cloud: every point becomes `Rᵀ p`.
pub fn correct_frame(frame: &PointCloudFrame, rotation: &Rotation3) -> Result<PointCloudFrame> {
    if frame.tag != FrameTag::SensorFrame {
        return Err(Error::State(format!(
            "frame {} is {:?}, expected SensorFrame",
            frame.frame_id, frame.tag
        )));
    }
    let points = frame.points.iter().map(|p| rotation.apply_transpose(p)).collect();
    let mut out = frame.replace_points(points);
    out.tag = FrameTag::LeveledFrame;
    Ok(out)
}

/// Estimates mounting angles from points the operator marked as road surface.
///
/// The ground normal seen by the sensor is the third column of `R`, i.e.
/// `(sin θ cos φ, −sin φ, cos θ cos φ)`.
pub fn tilt_from_ground_points(points: &[Point3]) -> Result<TiltAngles> {
    let normal = fit_plane_normal(points)?;
    let roll = (-normal[1]).clamp(-1.0, 1.0).asin();
    let pitch = normal[0].atan2(normal[2]);
    TiltAngles::new(roll, pitch)
}

/// Least-squares plane normal (unit, oriented with non-negative z).
pub fn fit_plane_normal(points: &[Point3]) -> Result<[f64; 3]> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let c = Point3::centroid(points).expect("non-empty");
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = (*p - c).to_vector();
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    if eig.eigenvalues[order[1]] <= 1e-12 * eig.eigenvalues[order[2]].max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateGeometry("ground points are collinear".into()));
    }
    let mut n = eig.eigenvectors.column(order[0]).into_owned();
    if n[2] < 0.0 {
        n = -n;
    }
    n /= n.norm();
    Ok([n[0], n[1], n[2]])
}

/// Polygon in the leveled x–y plane extruded over `[z_min, z_max]`.
/// All boundaries are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionOfInterest {
    pub polygon: Vec<[f64; 2]>,
    pub z_min: f64,
    pub z_max: f64,
}

impl RegionOfInterest {
    pub fn new(polygon: Vec<[f64; 2]>, z_min: f64, z_max: f64) -> Result<Self> {
        let roi = Self {
            polygon,
            z_min,
            z_max,
        };
        roi.validate()?;
        Ok(roi)
    }

    /// Axis-aligned box helper.
    pub fn rectangle(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> Result<Self> {
        Self::new(
            vec![[x.0, y.0], [x.1, y.0], [x.1, y.1], [x.0, y.1]],
            z.0,
            z.1,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let poly = &self.polygon;
        if poly.len() < 3 {
            return Err(Error::invalid(format!("ROI polygon has {} vertices, need >= 3", poly.len())));
        }
        if poly.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ROI polygon has non-finite vertex"));
        }
        if !(self.z_min.is_finite() && self.z_max.is_finite() && self.z_min < self.z_max) {
            return Err(Error::invalid(format!(
                "ROI z range [{}, {}] is empty",
                self.z_min, self.z_max
            )));
        }
        let n = poly.len();
        let area2: f64 = (0..n)
            .map(|i| {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum();
        if area2 == 0.0 {
            return Err(Error::invalid("ROI polygon has zero area"));
        }
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if a == b {
                return Err(Error::invalid(format!("ROI polygon repeats vertex {i}")));
            }
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (c, d) = (poly[j], poly[(j + 1) % n]);
                let hit = if adjacent {
                    // adjacent edges may only share their common vertex
                    let (far_i, far_j) = if j == i + 1 { (a, d) } else { (b, c) };
                    on_segment(c, d, far_i) || on_segment(a, b, far_j)
                } else {
                    segments_intersect(a, b, c, d)
                };
                if hit {
                    return Err(Error::invalid(format!(
                        "ROI polygon is self-intersecting (edges {i} and {j})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point3) -> bool {
        p.z >= self.z_min && p.z <= self.z_max && self.contains_xy(p.x, p.y)
    }

    fn contains_xy(&self, x: f64, y: f64) -> bool {
        let poly = &self.polygon;
        let n = poly.len();
        let mut inside = false;
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            if on_segment(a, b, [x, y]) {
                return true;
            }
            if (a[1] > y) != (b[1] > y) {
                let x_cross = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    cross(a, b, p) == 0.0
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(c, d, a) || on_segment(c, d, b) || on_segment(a, b, c) || on_segment(a, b, d)
}

/// Keeps points inside (or on) the ROI, preserving order.
pub fn crop_roi(frame: &PointCloudFrame, roi: &RegionOfInterest) -> Result<PointCloudFrame> {
    roi.validate()?;
    let points = frame.points.iter().copied().filter(|p| roi.contains(p)).collect();
    Ok(frame.replace_points(points))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelParams {
    /// Edge length of the cubic voxel, meters.
    pub size: f64,
}

impl VoxelParams {
    pub fn new(size: f64) -> Result<Self> {
        let p = Self { size };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.size.is_finite() && self.size > 0.0) {
            return Err(Error::invalid(format!("voxel size {} must be > 0", self.size)));
        }
        Ok(())
    }
}

impl Default for VoxelParams {
    fn default() -> Self {
        Self { size: 0.2 }
    }
}

pub type VoxelIndex = [i64; 3];

/// `(⌊x/s⌋, ⌊y/s⌋, ⌊z/s⌋)`.
pub fn voxel_index(p: &Point3, size: f64) -> VoxelIndex {
    [
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    ]
}

/// One centroid per occupied voxel, ordered by ascending voxel index.
pub fn voxel_downsample(frame: &PointCloudFrame, params: &VoxelParams) -> Result<PointCloudFrame> {
    params.validate()?;
    Ok(frame.replace_points(voxel_centroids(&frame.points, params.size)))
}

pub(crate) fn voxel_centroids(points: &[Point3], size: f64) -> Vec<Point3> {
    let mut cells: HashMap<VoxelIndex, ([f64; 3], usize)> = HashMap::with_capacity(points.len());
    for p in points {
        let e = cells.entry(voxel_index(p, size)).or_insert(([0.0; 3], 0));
        e.0[0] += p.x;
        e.0[1] += p.y;
        e.0[2] += p.z;
        e.1 += 1;
    }
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_unstable_by_key(|(k, _)| *k);
    cells
        .into_iter()
        .map(|(_, (s, n))| {
            let n = n as f64;
            Point3::new(s[0] / n, s[1] / n, s[2] / n)
        })
        .collect()
}
