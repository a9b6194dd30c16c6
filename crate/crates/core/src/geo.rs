//! WGS-84 geodesy and the LiDAR → ENU extrinsic calibration.
//!
//! Calibration runs in two stages: a closed-form rigid registration of
//! labeled static point pairs, then a yaw/planar/vertical refinement from
//! arc-length resampled vehicle trajectories. The refinement is composed
//! onto the static solution.

use log::warn;
use nalgebra::{Matrix2, Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::cloud::Rotation3;
use crate::error::{Error, Result};
use crate::point::Point3;

pub const WGS84_A: f64 = 6_378_137.0;
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

/// Below this ratio of second to first singular value the static points
/// are treated as collinear.
pub const COLLINEAR_RATIO: f64 = 1e-6;
/// Below this ratio a poorly-conditioned geometry warning is raised.
pub const WEAK_GEOMETRY_RATIO: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticCoord {
    #[serde(rename = "lat")]
    pub latitude_deg: f64,
    #[serde(rename = "lon")]
    pub longitude_deg: f64,
    #[serde(rename = "alt")]
    pub altitude_m: f64,
}

impl GeodeticCoord {
    pub fn new(latitude_deg: f64, longitude_deg: f64, altitude_m: f64) -> Result<Self> {
        let g = Self {
            latitude_deg,
            longitude_deg,
            altitude_m,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latitude_deg.is_finite() && self.latitude_deg.abs() <= 90.0) {
            return Err(Error::invalid(format!("latitude {} out of range", self.latitude_deg)));
        }
        if !(self.longitude_deg.is_finite() && self.longitude_deg.abs() <= 180.0) {
            return Err(Error::invalid(format!("longitude {} out of range", self.longitude_deg)));
        }
        if !self.altitude_m.is_finite() {
            return Err(Error::invalid("altitude is not finite"));
        }
        Ok(())
    }

    pub fn to_ecef(&self) -> Vector3<f64> {
        let (sp, cp) = self.latitude_deg.to_radians().sin_cos();
        let (sl, cl) = self.longitude_deg.to_radians().sin_cos();
        let n = prime_vertical_radius(sp);
        let h = self.altitude_m;
        Vector3::new((n + h) * cp * cl, (n + h) * cp * sl, (n * (1.0 - WGS84_E2) + h) * sp)
    }

    /// Iterative inverse of [`to_ecef`](Self::to_ecef).
    pub fn from_ecef(v: &Vector3<f64>) -> Self {
        let (x, y, z) = (v[0], v[1], v[2]);
        let lon = y.atan2(x);
        let p = x.hypot(y);
        let mut lat = z.atan2(p * (1.0 - WGS84_E2));
        let mut h = 0.0;
        for _ in 0..10 {
            let (s, c) = lat.sin_cos();
            let n = prime_vertical_radius(s);
            h = if c.abs() > 1e-10 { p / c - n } else { z.abs() - n * (1.0 - WGS84_E2) };
            let next = z.atan2(p * (1.0 - WGS84_E2 * n / (n + h)));
            let done = (next - lat).abs() < 1e-15;
            lat = next;
            if done {
                break;
            }
        }
        Self {
            latitude_deg: lat.to_degrees(),
            longitude_deg: lon.to_degrees(),
            altitude_m: h,
        }
    }
}

/// `N(φ) = a / sqrt(1 − e² sin² φ)`.
pub fn prime_vertical_radius(sin_lat: f64) -> f64 {
    WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt()
}

/// `M(φ) = a (1 − e²) / (1 − e² sin² φ)^{3/2}`.
pub fn meridian_radius(sin_lat: f64) -> f64 {
    WGS84_A * (1.0 - WGS84_E2) / (1.0 - WGS84_E2 * sin_lat * sin_lat).powf(1.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnuCoord {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl EnuCoord {
    pub const fn new(east: f64, north: f64, up: f64) -> Self {
        Self { east, north, up }
    }

    pub fn to_point(self) -> Point3 {
        Point3::new(self.east, self.north, self.up)
    }

    pub fn from_point(p: Point3) -> Self {
        Self::new(p.x, p.y, p.z)
    }
}

/// Local tangent plane anchored at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnuReference {
    pub origin: GeodeticCoord,
}

impl EnuReference {
    pub fn new(origin: GeodeticCoord) -> Result<Self> {
        origin.validate()?;
        Ok(Self { origin })
    }

    /// Rows are the east, north and up unit vectors in ECEF.
    fn ecef_to_enu(&self) -> Matrix3<f64> {
        enu_basis(self.origin.latitude_deg.to_radians(), self.origin.longitude_deg.to_radians())
    }
}

fn enu_basis(lat: f64, lon: f64) -> Matrix3<f64> {
    let (sp, cp) = lat.sin_cos();
    let (sl, cl) = lon.sin_cos();
    #[rustfmt::skip]
    let m = Matrix3::new(
        -sl, cl, 0.0,
        -sp * cl, -sp * sl, cp,
        cp * cl, cp * sl, sp,
    );
    m
}

fn wrap_degrees(d: f64) -> f64 {
    // in-range values pass through untouched; shifting by 180 would round
    if (-180.0..=180.0).contains(&d) {
        return d;
    }
    let w = (d + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// ECEF offset `ecef(g) − ecef(ref)` formed from angle differences, so no
/// Earth-radius sized values are subtracted.
fn ecef_delta(g: &GeodeticCoord, r: &GeodeticCoord) -> Vector3<f64> {
    let dphi = (g.latitude_deg - r.latitude_deg).to_radians();
    let dlam = wrap_degrees(g.longitude_deg - r.longitude_deg).to_radians();
    let phi0 = r.latitude_deg.to_radians();
    let lam0 = r.longitude_deg.to_radians();
    let phi1 = phi0 + dphi;

    let (sp0, cp0) = phi0.sin_cos();
    let (sl0, cl0) = lam0.sin_cos();
    let (sp1, cp1) = phi1.sin_cos();

    let half_dphi = (0.5 * dphi).sin();
    let half_dlam = (0.5 * dlam).sin();
    let (s_mid_phi, c_mid_phi) = (phi0 + 0.5 * dphi).sin_cos();
    let (s_mid_lam, c_mid_lam) = (lam0 + 0.5 * dlam).sin_cos();
    let d_cos_phi = -2.0 * s_mid_phi * half_dphi;
    let d_sin_phi = 2.0 * c_mid_phi * half_dphi;
    let d_cos_lam = -2.0 * s_mid_lam * half_dlam;
    let d_sin_lam = 2.0 * c_mid_lam * half_dlam;

    let w0 = (1.0 - WGS84_E2 * sp0 * sp0).sqrt();
    let w1 = (1.0 - WGS84_E2 * sp1 * sp1).sqrt();
    let n1 = WGS84_A / w1;
    // W0² − W1² = e² (sin φ1 − sin φ0)(sin φ1 + sin φ0)
    let dn = WGS84_A * (WGS84_E2 * d_sin_phi * (sp1 + sp0)) / (w0 * w1 * (w0 + w1));
    let dh = g.altitude_m - r.altitude_m;

    let d_cpcl = cp1 * d_cos_lam + cl0 * d_cos_phi;
    let d_cpsl = cp1 * d_sin_lam + sl0 * d_cos_phi;
    let big1 = n1 + g.altitude_m;
    let dx = big1 * d_cpcl + (dn + dh) * cp0 * cl0;
    let dy = big1 * d_cpsl + (dn + dh) * cp0 * sl0;
    let dz = (n1 * (1.0 - WGS84_E2) + g.altitude_m) * d_sin_phi + (dn * (1.0 - WGS84_E2) + dh) * sp0;
    Vector3::new(dx, dy, dz)
}

/// Exact ellipsoidal geodetic → ENU.
pub fn geodetic_to_enu(g: &GeodeticCoord, reference: &EnuReference) -> Result<EnuCoord> {
    g.validate()?;
    reference.origin.validate()?;
    let v = reference.ecef_to_enu() * ecef_delta(g, &reference.origin);
    Ok(EnuCoord::new(v[0], v[1], v[2]))
}

/// Inverse of [`geodetic_to_enu`]: an ECEF-based first guess polished by
/// Newton steps on the forward map.
pub fn enu_to_geodetic(e: &EnuCoord, reference: &EnuReference) -> Result<GeodeticCoord> {
    reference.origin.validate()?;
    if !(e.east.is_finite() && e.north.is_finite() && e.up.is_finite()) {
        return Err(Error::invalid("ENU coordinate is not finite"));
    }
    let rot = reference.ecef_to_enu();
    let target = Vector3::new(e.east, e.north, e.up);
    let ecef = reference.origin.to_ecef() + rot.transpose() * target;
    let mut g = GeodeticCoord::from_ecef(&ecef);
    for _ in 0..4 {
        let current = rot * ecef_delta(&g, &reference.origin);
        let residual = target - current;
        if residual.amax() < 1e-12 {
            break;
        }
        let lat = g.latitude_deg.to_radians();
        let lon = g.longitude_deg.to_radians();
        let (sp, cp) = lat.sin_cos();
        let local = enu_basis(lat, lon).transpose();
        let (east, north, up) = (local.column(0), local.column(1), local.column(2));
        let dlat = north * (meridian_radius(sp) + g.altitude_m);
        let dlon = east * ((prime_vertical_radius(sp) + g.altitude_m) * cp);
        let jac = rot * Matrix3::from_columns(&[dlat, dlon, up.into_owned()]);
        let Some(step) = jac.lu().solve(&residual) else {
            break;
        };
        g.latitude_deg += step[0].to_degrees();
        g.longitude_deg = wrap_degrees(g.longitude_deg + step[1].to_degrees());
        g.altitude_m += step[2];
    }
    Ok(g)
}

/// Rigid transform `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform3D {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl RigidTransform3D {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from_vector(&(self.rotation.matrix() * p.to_vector() + self.translation))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            translation: -(rt.matrix() * self.translation),
            rotation: rt,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform3D) -> Self {
        Self {
            rotation: Rotation3::from_matrix_unchecked(self.rotation.matrix() * other.rotation.matrix()),
            translation: self.rotation.matrix() * other.translation + self.translation,
        }
    }

    /// Rotation angle of `R₁ᵀ R₂`, radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform3D) -> f64 {
        let m = self.rotation.matrix().transpose() * other.rotation.matrix();
        let axis = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        // atan2 keeps precision near zero where acos of the trace does not
        (0.5 * axis.norm()).atan2(0.5 * (m.trace() - 1.0))
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let m = self.rotation.matrix();
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    pub fn from_row_major(r: &[f64; 9], t: &[f64; 3]) -> Result<Self> {
        let rotation = Rotation3::from_matrix(Matrix3::from_row_slice(r), 1e-6)?;
        Ok(Self::new(rotation, Vector3::new(t[0], t[1], t[2])))
    }
}

/// Maps a leveled LiDAR point into ENU.
pub fn apply_extrinsic(tf: &RigidTransform3D, p: &Point3) -> EnuCoord {
    EnuCoord::from_point(tf.apply(p))
}

/// Labeled LiDAR/ENU pairs of static targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<(Point3, EnuCoord)>,
    condition: f64,
}

impl CorrespondenceSet {
    /// Requires ≥3 finite pairs whose LiDAR points are not collinear.
    pub fn new(pairs: Vec<(Point3, EnuCoord)>) -> Result<Self> {
        if pairs.len() < 3 {
            return Err(Error::DegenerateGeometry(format!(
                "need at least 3 correspondences, got {}",
                pairs.len()
            )));
        }
        if pairs
            .iter()
            .any(|(l, e)| !l.is_finite() || !e.to_point().is_finite())
        {
            return Err(Error::invalid("correspondence contains non-finite values"));
        }
        let lidar: Vec<Point3> = pairs.iter().map(|(l, _)| *l).collect();
        let condition = spread_ratio(&lidar);
        if !(condition >= COLLINEAR_RATIO) {
            return Err(Error::DegenerateGeometry(format!(
                "LiDAR points are collinear (singular value ratio {condition:.3e})"
            )));
        }
        if condition < WEAK_GEOMETRY_RATIO {
            warn!("static points are nearly collinear (ratio {condition:.3e}); rotation about their line is weakly constrained");
        }
        Ok(Self { pairs, condition })
    }

    pub fn pairs(&self) -> &[(Point3, EnuCoord)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Second over first singular value of the centered LiDAR points.
    pub fn condition_ratio(&self) -> f64 {
        self.condition
    }
}

fn spread_ratio(points: &[Point3]) -> f64 {
    let c = Point3::centroid(points).unwrap_or_default();
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = (*p - c).to_vector();
        cov += d * d.transpose();
    }
    let mut sv: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] == 0.0 {
        0.0
    } else {
        sv[1] / sv[0]
    }
}

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]`.
fn kabsch(src: &[Point3], dst: &[Point3]) -> Result<RigidTransform3D> {
    let cs = Point3::centroid(src).ok_or_else(|| Error::InsufficientData("no points".into()))?;
    let cd = Point3::centroid(dst).ok_or_else(|| Error::InsufficientData("no points".into()))?;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (*s - cs).to_vector() * (*d - cd).to_vector().transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical("SVD of cross-covariance failed".into())),
    };
    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let r = v * d * u.transpose();
    let t = cd.to_vector() - r * cs.to_vector();
    Ok(RigidTransform3D::new(Rotation3::from_matrix_unchecked(r), t))
}

/// Error summary in the layout of a calibration report row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub per_point: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

impl ErrorSummary {
    fn from_errors(per_point: Vec<f64>) -> Self {
        let n = per_point.len().max(1) as f64;
        let mean = per_point.iter().sum::<f64>() / n;
        let max = per_point.iter().copied().fold(0.0, f64::max);
        Self { per_point, mean, max }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticRegistration {
    pub transform: RigidTransform3D,
    pub residuals: ErrorSummary,
    pub condition_ratio: f64,
}

/// Closed-form minimizer of `Σ ‖R p_lidar + t − p_enu‖²` over SO(3) × ℝ³.
pub fn estimate_static_extrinsic(c: &CorrespondenceSet) -> Result<StaticRegistration> {
    let (src, dst): (Vec<Point3>, Vec<Point3>) = c.pairs.iter().map(|(l, e)| (*l, e.to_point())).unzip();
    let transform = kabsch(&src, &dst)?;
    Ok(StaticRegistration {
        residuals: static_registration_error(c, &transform),
        transform,
        condition_ratio: c.condition,
    })
}

/// `e_i = ‖R p_i + t − q_i‖`.
pub fn static_registration_error(c: &CorrespondenceSet, tf: &RigidTransform3D) -> ErrorSummary {
    ErrorSummary::from_errors(
        c.pairs
            .iter()
            .map(|(l, e)| tf.apply(l).distance(&e.to_point()))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub position: Point3,
    pub arclength: f64,
}

/// Samples a polyline at `0, spacing, 2·spacing, …` along its length, plus
/// the endpoint. Consecutive duplicate vertices are dropped first.
pub fn resample_by_arclength(traj: &[Point3], spacing: f64) -> Result<Vec<TrajectorySample>> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::invalid(format!("resample spacing {spacing} must be > 0")));
    }
    let mut pts: Vec<Point3> = Vec::with_capacity(traj.len());
    for p in traj {
        if !p.is_finite() {
            return Err(Error::invalid("trajectory point is not finite"));
        }
        if pts.last() != Some(p) {
            pts.push(*p);
        }
    }
    if pts.len() < 2 {
        return Err(Error::DegenerateGeometry(
            "trajectory needs at least two distinct points".into(),
        ));
    }
    let mut cumulative = Vec::with_capacity(pts.len());
    cumulative.push(0.0);
    for w in pts.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + w[0].distance(&w[1]));
    }
    let total = *cumulative.last().unwrap();

    let mut out = Vec::new();
    let mut seg = 0;
    let mut k = 0usize;
    loop {
        let s = k as f64 * spacing;
        if s >= total - spacing * 1e-9 {
            break;
        }
        while cumulative[seg + 1] < s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let f = (s - cumulative[seg]) / len;
        out.push(TrajectorySample {
            position: pts[seg] + (pts[seg + 1] - pts[seg]) * f,
            arclength: s,
        });
        k += 1;
    }
    out.push(TrajectorySample {
        position: *pts.last().unwrap(),
        arclength: total,
    });
    Ok(out)
}

/// Yaw about ENU up, planar shift and vertical offset.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarRefinement {
    /// Radians, in (−π, π].
    pub theta_yaw: f64,
    pub t_xy: [f64; 2],
    pub delta_z: f64,
}

impl PlanarRefinement {
    pub fn yaw_rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.theta_yaw.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    /// `[R_z p_xy + t_xy, p_z + Δz]`.
    pub fn apply(&self, p: &Point3) -> Point3 {
        let (s, c) = self.theta_yaw.sin_cos();
        Point3::new(
            c * p.x - s * p.y + self.t_xy[0],
            s * p.x + c * p.y + self.t_xy[1],
            p.z + self.delta_z,
        )
    }
}

/// Pairs two resampled trajectories index-wise, truncated to the shorter.
pub fn pair_trajectories(a: &[TrajectorySample], b: &[TrajectorySample]) -> Vec<(Point3, Point3)> {
    a.iter().zip(b).map(|(x, y)| (x.position, y.position)).collect()
}

/// Solves yaw and planar translation in closed form over all pairs
/// `(lidar_enu, gps_enu)`; `Δz` is the GPS mean height minus the LiDAR mean.
pub fn refine_planar_and_vertical(pairs: &[(Point3, Point3)]) -> Result<PlanarRefinement> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "planar refinement needs at least 3 paired samples, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let (mut pl, mut pg) = (Point3::ORIGIN, Point3::ORIGIN);
    for (l, g) in pairs {
        pl = pl + *l;
        pg = pg + *g;
    }
    let (pl, pg) = (pl * (1.0 / n), pg * (1.0 / n));
    let mut h = Matrix2::zeros();
    for (l, g) in pairs {
        let (lx, ly) = (l.x - pl.x, l.y - pl.y);
        let (gx, gy) = (g.x - pg.x, g.y - pg.y);
        h += Matrix2::new(lx * gx, lx * gy, ly * gx, ly * gy);
    }
    // R = argmax tr(Rᵀ Hᵀ) for 2-D rotations: θ = atan2(H01 − H10, H00 + H11)
    let theta = (h[(0, 1)] - h[(1, 0)]).atan2(h[(0, 0)] + h[(1, 1)]);
    if !theta.is_finite() {
        return Err(Error::Numerical("planar alignment produced a non-finite yaw".into()));
    }
    let theta = if theta <= -std::f64::consts::PI { std::f64::consts::PI } else { theta };
    let (s, c) = theta.sin_cos();
    let t_xy = [pg.x - (c * pl.x - s * pl.y), pg.y - (s * pl.x + c * pl.y)];
    Ok(PlanarRefinement {
        theta_yaw: theta,
        t_xy,
        delta_z: pg.z - pl.z,
    })
}

/// `R = R_z R₀`, `t = R_z t₀ + [t_xy, Δz]`.
pub fn compose_final(initial: &RigidTransform3D, refine: &PlanarRefinement) -> RigidTransform3D {
    let rz = refine.yaw_rotation();
    let r = rz * initial.rotation.matrix();
    // re-orthonormalize against accumulated rounding
    let r = r * (Matrix3::identity() * 3.0 - r.transpose() * r) * 0.5;
    let t = rz * initial.translation + Vector3::new(refine.t_xy[0], refine.t_xy[1], refine.delta_z);
    RigidTransform3D::new(Rotation3::from_matrix_unchecked(r), t)
}

/// Horizontal distance between index-paired samples.
pub fn trajectory_alignment_error(pairs: &[(Point3, Point3)]) -> Result<ErrorSummary> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no paired trajectory samples".into()));
    }
    Ok(ErrorSummary::from_errors(
        pairs.iter().map(|(a, b)| a.horizontal_distance(b)).collect(),
    ))
}
