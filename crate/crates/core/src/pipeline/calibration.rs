use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{
    compose_final, estimate_static_extrinsic, geodetic_to_enu, pair_trajectories,
    refine_planar_and_vertical, resample_by_arclength, trajectory_alignment_error, CorrespondenceSet,
    EnuReference, ErrorSummary, GeodeticCoord, PlanarRefinement, RigidTransform3D,
};
use crate::point::Point3;

pub const DEFAULT_RESAMPLE_SPACING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub max: f64,
}

impl From<&ErrorSummary> for ErrorStats {
    fn from(e: &ErrorSummary) -> Self {
        Self {
            mean: e.mean,
            max: e.max,
        }
    }
}

/// Persisted LiDAR → ENU calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicArtifact {
    pub enu_reference: GeodeticCoord,
    /// Row-major rotation.
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    pub t: [f64; 3],
    pub static_error: Option<ErrorStats>,
    pub trajectory_error: Option<ErrorStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_error_before_refinement: Option<ErrorStats>,
    pub created_at: String,
}

impl ExtrinsicArtifact {
    pub fn new(reference: &EnuReference, tf: &RigidTransform3D) -> Self {
        Self {
            enu_reference: reference.origin,
            rotation: tf.rotation_row_major(),
            t: [tf.translation[0], tf.translation[1], tf.translation[2]],
            static_error: None,
            trajectory_error: None,
            trajectory_error_before_refinement: None,
            created_at: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn transform(&self) -> Result<RigidTransform3D> {
        RigidTransform3D::from_row_major(&self.rotation, &self.t)
    }

    pub fn reference(&self) -> Result<EnuReference> {
        EnuReference::new(self.enu_reference)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let a: Self = serde_json::from_str(&text)?;
        a.transform()?;
        a.reference()?;
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Parses `a,b,c,...` rows of floats with a fixed column count. A first
/// line that does not parse as numbers is taken as a header.
fn read_csv_rows(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == columns && v.iter().all(|x| x.is_finite()) => rows.push(v),
            Err(_) if rows.is_empty() && i == 0 => continue,
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("expected {columns} finite numeric columns"),
                })
            }
        }
    }
    Ok(rows)
}

/// `lidar_x,lidar_y,lidar_z,lat,lon,alt`
pub fn read_static_pairs_csv(path: &Path) -> Result<Vec<(Point3, GeodeticCoord)>> {
    read_csv_rows(path, 6)?
        .into_iter()
        .map(|r| Ok((Point3::new(r[0], r[1], r[2]), GeodeticCoord::new(r[3], r[4], r[5])?)))
        .collect()
}

/// `timestamp,lat,lon,alt`
pub fn read_gps_trajectory_csv(path: &Path) -> Result<Vec<(f64, GeodeticCoord)>> {
    read_csv_rows(path, 4)?
        .into_iter()
        .map(|r| Ok((r[0], GeodeticCoord::new(r[1], r[2], r[3])?)))
        .collect()
}

/// `timestamp,x,y,z` in the leveled LiDAR frame (tracked centroid).
pub fn read_lidar_trajectory_csv(path: &Path) -> Result<Vec<(f64, Point3)>> {
    Ok(read_csv_rows(path, 4)?
        .into_iter()
        .map(|r| (r[0], Point3::new(r[1], r[2], r[3])))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticCalibration {
    pub artifact: ExtrinsicArtifact,
    pub residuals: ErrorSummary,
    pub condition_ratio: f64,
}

/// Registers static LiDAR points against surveyed GPS fixes.
pub fn calibrate_static(pairs: &[(Point3, GeodeticCoord)], origin: GeodeticCoord) -> Result<StaticCalibration> {
    let reference = EnuReference::new(origin)?;
    let enu = pairs
        .iter()
        .map(|(l, g)| Ok((*l, geodetic_to_enu(g, &reference)?)))
        .collect::<Result<Vec<_>>>()?;
    let c = CorrespondenceSet::new(enu)?;
    let reg = estimate_static_extrinsic(&c)?;
    let mut artifact = ExtrinsicArtifact::new(&reference, &reg.transform);
    artifact.static_error = Some((&reg.residuals).into());
    Ok(StaticCalibration {
        artifact,
        residuals: reg.residuals,
        condition_ratio: reg.condition_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub refinement: PlanarRefinement,
    pub spacing_m: f64,
    pub paired_samples: usize,
    pub before_refinement: ErrorStats,
    pub after_refinement: ErrorStats,
    pub per_sample_after: Vec<f64>,
}

/// Refines a static artifact from matched LiDAR and GPS trajectories.
/// `lidar[i]` and `gps[i]` must describe the same pass.
pub fn calibrate_trajectory(
    artifact: &ExtrinsicArtifact,
    lidar: &[Vec<Point3>],
    gps: &[Vec<GeodeticCoord>],
    spacing: f64,
) -> Result<(ExtrinsicArtifact, TrajectoryReport)> {
    if lidar.is_empty() || lidar.len() != gps.len() {
        return Err(Error::invalid(format!(
            "need matching trajectory lists, got {} LiDAR and {} GPS",
            lidar.len(),
            gps.len()
        )));
    }
    let initial = artifact.transform()?;
    let reference = artifact.reference()?;
    let mut pairs = Vec::new();
    for (l, g) in lidar.iter().zip(gps) {
        let l_enu: Vec<Point3> = l.iter().map(|p| initial.apply(p)).collect();
        let g_enu = g
            .iter()
            .map(|c| Ok(geodetic_to_enu(c, &reference)?.to_point()))
            .collect::<Result<Vec<_>>>()?;
        let ls = resample_by_arclength(&l_enu, spacing)?;
        let gs = resample_by_arclength(&g_enu, spacing)?;
        pairs.extend(pair_trajectories(&ls, &gs));
    }
    let before = trajectory_alignment_error(&pairs)?;
    let refinement = refine_planar_and_vertical(&pairs)?;
    let moved: Vec<(Point3, Point3)> = pairs.iter().map(|(l, g)| (refinement.apply(l), *g)).collect();
    let after = trajectory_alignment_error(&moved)?;
    let final_tf = compose_final(&initial, &refinement);

    let mut out = ExtrinsicArtifact::new(&reference, &final_tf);
    out.static_error = artifact.static_error;
    out.trajectory_error = Some((&after).into());
    out.trajectory_error_before_refinement = Some((&before).into());
    Ok((
        out,
        TrajectoryReport {
            refinement,
            spacing_m: spacing,
            paired_samples: pairs.len(),
            before_refinement: (&before).into(),
            after_refinement: (&after).into(),
            per_sample_after: after.per_point,
        },
    ))
}
