//! DBSCAN clustering, per-cluster geometry features and the threshold-based
//! truck classifier.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::Point3;
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbscanParams {
    /// Neighborhood radius, meters (inclusive).
    pub epsilon: f64,
    /// Minimum neighborhood size for a core point, counting the point itself.
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            epsilon: 1.2,
            min_pts: 8,
        }
    }
}

impl DbscanParams {
    pub fn new(epsilon: f64, min_pts: usize) -> Result<Self> {
        let p = Self { epsilon, min_pts };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon {} must be > 0", self.epsilon)));
        }
        if self.min_pts < 1 {
            return Err(Error::invalid("min_pts must be >= 1"));
        }
        Ok(())
    }
}

/// Cluster assignment per input point, in input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    /// `Some(k)` for members of cluster `k`, `None` for noise.
    pub labels: Vec<Option<usize>>,
    /// Member indices per cluster, ascending.
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

impl Clustering {
    pub fn cluster_points(&self, points: &[Point3]) -> Vec<Vec<Point3>> {
        self.clusters
            .iter()
            .map(|members| members.iter().map(|&i| points[i]).collect())
            .collect()
    }
}

/// Density-based clustering.
///
/// Clusters are numbered in the order their first core point appears in the
/// input. A border point reachable from several clusters joins the one
/// numbered first.
pub fn dbscan(points: &[Point3], params: &DbscanParams) -> Result<Clustering> {
    params.validate()?;
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Unvisited,
        Noise,
        Member(usize),
    }

    let tree = KdTree::build(points.to_vec());
    let mut state = vec![State::Unvisited; points.len()];
    let mut n_clusters = 0;
    let mut neighbors = Vec::new();
    let mut queue = VecDeque::new();

    for i in 0..points.len() {
        if state[i] != State::Unvisited {
            continue;
        }
        tree.within_radius_into(&points[i], params.epsilon, &mut neighbors);
        if neighbors.len() < params.min_pts {
            state[i] = State::Noise;
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        state[i] = State::Member(id);
        queue.extend(neighbors.iter().copied());
        while let Some(j) = queue.pop_front() {
            match state[j] {
                State::Member(_) => continue,
                State::Noise => {
                    // border point: noise only because it is not core itself
                    state[j] = State::Member(id);
                    continue;
                }
                State::Unvisited => state[j] = State::Member(id),
            }
            tree.within_radius_into(&points[j], params.epsilon, &mut neighbors);
            if neighbors.len() >= params.min_pts {
                queue.extend(neighbors.iter().copied().filter(|&k| !matches!(state[k], State::Member(_))));
            }
        }
    }

    let mut clusters = vec![Vec::new(); n_clusters];
    let mut noise = Vec::new();
    let labels = state
        .iter()
        .enumerate()
        .map(|(i, s)| match *s {
            State::Member(k) => {
                clusters[k].push(i);
                Some(k)
            }
            _ => {
                noise.push(i);
                None
            }
        })
        .collect();
    Ok(Clustering {
        labels,
        clusters,
        noise,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VehicleClass {
    NonTruck,
    CompactTruck,
    LongTruck,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 3] = [VehicleClass::NonTruck, VehicleClass::CompactTruck, VehicleClass::LongTruck];

    pub fn is_truck(self) -> bool {
        !matches!(self, VehicleClass::NonTruck)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::NonTruck => "NonTruck",
            VehicleClass::CompactTruck => "CompactTruck",
            VehicleClass::LongTruck => "LongTruck",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VehicleClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VehicleClass::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown vehicle class `{s}`")))
    }
}

/// Object instance with its geometry features.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub cluster_id: usize,
    pub points: Vec<Point3>,
    pub centroid: Point3,
    /// Highest member z.
    pub hmax: f64,
    /// Population standard deviation of member z.
    pub sigma_z: f64,
    /// `max z − min z`.
    pub abs_height: f64,
    /// `(length, width)` of the axis-aligned x–y bounding box, length ≥ width.
    pub extent_xy: (f64, f64),
}

pub fn cluster_features(points: Vec<Point3>) -> Result<Cluster> {
    let centroid = Point3::centroid(&points).ok_or_else(|| Error::invalid("cluster has no points"))?;
    let n = points.len() as f64;
    let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ss = 0.0;
    for p in &points {
        zmin = zmin.min(p.z);
        zmax = zmax.max(p.z);
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
        ss += (p.z - centroid.z) * (p.z - centroid.z);
    }
    let (dx, dy) = (xmax - xmin, ymax - ymin);
    Ok(Cluster {
        cluster_id: 0,
        centroid,
        hmax: zmax,
        sigma_z: (ss / n).sqrt(),
        abs_height: zmax - zmin,
        extent_xy: (dx.max(dy), dx.min(dy)),
        points,
    })
}

/// Clusters `points` and computes features for each cluster.
pub fn detect_clusters(points: &[Point3], params: &DbscanParams) -> Result<Vec<Cluster>> {
    let clustering = dbscan(points, params)?;
    clustering
        .cluster_points(points)
        .into_iter()
        .enumerate()
        .map(|(id, pts)| {
            let mut c = cluster_features(pts)?;
            c.cluster_id = id;
            Ok(c)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierThresholds {
    pub min_abs_height_truck: f64,
    /// Sensor-relative: compare against `hmax` in the leveled frame.
    pub min_hmax_truck: f64,
    pub min_sigma_z_truck: f64,
    pub min_length_long: f64,
}

impl ClassifierThresholds {
    /// Defaults for a site whose road surface sits at `ground_z` in the
    /// leveled sensor frame.
    pub fn for_ground(ground_z: f64) -> Self {
        Self {
            min_abs_height_truck: 2.5,
            min_hmax_truck: ground_z + 2.5,
            min_sigma_z_truck: 0.5,
            min_length_long: 9.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.min_abs_height_truck, self.min_sigma_z_truck, self.min_length_long]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !ok || !self.min_hmax_truck.is_finite() {
            return Err(Error::invalid(format!("bad classifier thresholds {self:?}")));
        }
        Ok(())
    }
}

impl Default for ClassifierThresholds {
    fn default() -> Self {
        Self::for_ground(0.0)
    }
}

/// Truck iff all three height features clear their gates; long iff the
/// x–y footprint length reaches `min_length_long`.
pub fn classify_vehicle(cluster: &Cluster, th: &ClassifierThresholds) -> VehicleClass {
    let truck = cluster.abs_height >= th.min_abs_height_truck
        && cluster.hmax >= th.min_hmax_truck
        && cluster.sigma_z >= th.min_sigma_z_truck;
    if !truck {
        VehicleClass::NonTruck
    } else if cluster.extent_xy.0 >= th.min_length_long {
        VehicleClass::LongTruck
    } else {
        VehicleClass::CompactTruck
    }
}
