//! Constant-velocity Kalman tracking, greedy gated association, direction
//! and time-of-arrival estimation.
//!
//! State is `[x, y, z, vx, vy, vz]` in the leveled sensor frame; only the
//! position is measured.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Matrix6x3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::cluster::VehicleClass;
use crate::error::{Error, Result};
use crate::point::Point3;

pub type Covariance6 = Matrix6<f64>;
pub type Covariance3 = Matrix3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x: Vector6<f64>,
    pub p: Covariance6,
}

impl KalmanState {
    pub fn position(&self) -> Point3 {
        Point3::new(self.x[0], self.x[1], self.x[2])
    }

    pub fn velocity(&self) -> Point3 {
        Point3::new(self.x[3], self.x[4], self.x[5])
    }

    pub fn horizontal_speed(&self) -> f64 {
        self.x[3].hypot(self.x[4])
    }
}

/// `A` with `dt` in the position-from-velocity block.
pub fn transition(dt: f64) -> Matrix6<f64> {
    let mut a = Matrix6::identity();
    for i in 0..3 {
        a[(i, i + 3)] = dt;
    }
    a
}

pub fn observation() -> Matrix3x6<f64> {
    Matrix3x6::identity()
}

fn symmetrize(p: &Covariance6) -> Covariance6 {
    (p + p.transpose()) * 0.5
}

/// Prediction step: `x ← A x`, `P ← A P Aᵀ + Q`.
pub fn kf_predict(state: &KalmanState, dt: f64, q: &Covariance6) -> Result<KalmanState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("prediction step dt = {dt} must be > 0")));
    }
    let a = transition(dt);
    Ok(KalmanState {
        x: a * state.x,
        p: symmetrize(&(a * state.p * a.transpose() + q)),
    })
}

/// Posterior state plus the innovation `z − H x̂` used to produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanUpdate {
    pub state: KalmanState,
    pub innovation: Vector3<f64>,
}

/// Measurement update with gain `K = P Hᵀ (H P Hᵀ + R)⁻¹`.
pub fn kf_update(state: &KalmanState, z: &Point3, r: &Covariance3) -> Result<KalmanUpdate> {
    let h = observation();
    let innovation = z.to_vector() - h * state.x;
    let s = h * state.p * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("innovation covariance is singular: {s}")))?;
    let k: Matrix6x3<f64> = state.p * h.transpose() * s_inv;
    let x = state.x + k * innovation;
    let p = (Matrix6::identity() - k * h) * state.p;
    Ok(KalmanUpdate {
        state: KalmanState { x, p: symmetrize(&p) },
        innovation,
    })
}

/// Process noise model. `Scaled` grows with the step length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessNoise {
    /// Diagonal per axis: position `position·dt²`, velocity `velocity·dt`.
    Scaled { position: f64, velocity: f64 },
    /// Fixed 6×6 matrix, row-major.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub process: ProcessNoise,
    /// Measurement standard deviation per axis, meters (`R = diag(σ²)`).
    pub measurement_sigma: [f64; 3],
    /// Velocity variance assigned to newborn tracks, (m/s)².
    #[serde(default = "default_init_velocity_var")]
    pub init_velocity_variance: f64,
}

fn default_init_velocity_var() -> f64 {
    25.0
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            process: ProcessNoise::Scaled {
                position: 0.1,
                velocity: 1.0,
            },
            measurement_sigma: [0.2; 3],
            init_velocity_variance: default_init_velocity_var(),
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if self.measurement_sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("measurement sigma must be > 0"));
        }
        if !(self.init_velocity_variance.is_finite() && self.init_velocity_variance > 0.0) {
            return Err(Error::invalid("initial velocity variance must be > 0"));
        }
        match &self.process {
            ProcessNoise::Scaled { position, velocity } => {
                if !(*position >= 0.0 && *velocity >= 0.0) {
                    return Err(Error::invalid("process noise scales must be >= 0"));
                }
            }
            ProcessNoise::Fixed(v) => {
                if v.len() != 36 {
                    return Err(Error::invalid("fixed process noise needs 36 entries"));
                }
                let q = Matrix6::from_row_slice(v);
                if (q - q.transpose()).abs().max() > 1e-9 {
                    return Err(Error::invalid("fixed process noise is not symmetric"));
                }
                if q.symmetric_eigenvalues().min() < -1e-9 {
                    return Err(Error::invalid("fixed process noise is not PSD"));
                }
            }
        }
        Ok(())
    }

    pub fn q(&self, dt: f64) -> Covariance6 {
        match &self.process {
            ProcessNoise::Scaled { position, velocity } => {
                let mut q = Matrix6::zeros();
                for i in 0..3 {
                    q[(i, i)] = position * dt * dt;
                    q[(i + 3, i + 3)] = velocity * dt;
                }
                q
            }
            ProcessNoise::Fixed(v) => Matrix6::from_row_slice(v),
        }
    }

    pub fn r(&self) -> Covariance3 {
        let s = self.measurement_sigma;
        Matrix3::from_diagonal(&Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2]))
    }

    /// Newborn track at `position`: zero velocity, position variance from
    /// `R`, velocity variance `init_velocity_variance`.
    pub fn initial_state(&self, position: &Point3) -> KalmanState {
        let mut x = Vector6::zeros();
        x[0] = position.x;
        x[1] = position.y;
        x[2] = position.z;
        let r = self.r();
        let mut p = Matrix6::zeros();
        for i in 0..3 {
            p[(i, i)] = r[(i, i)];
            p[(i + 3, i + 3)] = self.init_velocity_variance;
        }
        KalmanState { x, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Approaching,
    Departing,
    Stationary,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSiteConfig {
    /// Line-of-sight target, leveled frame.
    pub sensor_position: Point3,
    /// ToA target, leveled frame.
    pub stop_line_position: Point3,
    /// Speed below which a track is `Stationary`, m/s.
    pub min_speed: f64,
    /// Association gate, meters.
    pub gate_radius: f64,
    /// A track is deleted once it has missed more than this many frames.
    pub max_missed: u32,
    /// Associated frames required before a track is reported.
    pub min_hits: u32,
}

impl Default for SensorSiteConfig {
    fn default() -> Self {
        Self {
            sensor_position: Point3::ORIGIN,
            stop_line_position: Point3::ORIGIN,
            min_speed: 0.5,
            gate_radius: 5.0,
            max_missed: 5,
            min_hits: 3,
        }
    }
}

impl SensorSiteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_speed.is_finite() && self.min_speed > 0.0) {
            return Err(Error::invalid("min_speed must be > 0"));
        }
        if !(self.gate_radius.is_finite() && self.gate_radius > 0.0) {
            return Err(Error::invalid("gate_radius must be > 0"));
        }
        if !(self.sensor_position.is_finite() && self.stop_line_position.is_finite()) {
            return Err(Error::invalid("site positions must be finite"));
        }
        Ok(())
    }
}

/// Per-class vote counts, indexed by [`VehicleClass`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassVotes([u32; 3]);

impl ClassVotes {
    pub fn add(&mut self, class: VehicleClass) {
        self.0[class.index()] += 1;
    }

    pub fn count(&self, class: VehicleClass) -> u32 {
        self.0[class.index()]
    }

    /// Majority class; ties go to the larger class. `None` before any vote.
    pub fn decision(&self) -> Option<VehicleClass> {
        VehicleClass::ALL
            .into_iter()
            .filter(|c| self.count(*c) > 0)
            .max_by_key(|c| (self.count(*c), *c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub state: KalmanState,
    pub class_votes: ClassVotes,
    pub direction: Direction,
    /// Frames in which the track was associated with a detection (birth
    /// included).
    pub age_frames: u32,
    pub missed_frames: u32,
    /// `(timestamp, filtered position)` after every associated update.
    pub history: Vec<(f64, Point3)>,
    pub last_innovation: Option<Vector3<f64>>,
}

impl Track {
    pub fn class(&self) -> VehicleClass {
        self.class_votes.decision().unwrap_or(VehicleClass::NonTruck)
    }

    pub fn is_reportable(&self, cfg: &SensorSiteConfig) -> bool {
        self.age_frames >= cfg.min_hits
    }
}

/// A classified per-frame object handed to the tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub position: Point3,
    pub class: VehicleClass,
}

/// Sign of velocity · (sensor − position), with a speed deadband.
pub fn motion_direction(track: &Track, cfg: &SensorSiteConfig) -> Direction {
    direction_of(&track.state.velocity(), &track.state.position(), &cfg.sensor_position, cfg.min_speed)
}

pub fn direction_of(velocity: &Point3, position: &Point3, sensor: &Point3, min_speed: f64) -> Direction {
    if velocity.norm() < min_speed {
        return Direction::Stationary;
    }
    let line_of_sight = *sensor - *position;
    let dot = velocity.dot(&line_of_sight);
    if dot > 0.0 {
        Direction::Approaching
    } else if dot < 0.0 {
        Direction::Departing
    } else {
        Direction::Unknown
    }
}

/// Seconds until the stop line at the current horizontal speed, for
/// approaching tracks only. Uses straight-line horizontal distance.
pub fn estimate_toa(track: &Track, cfg: &SensorSiteConfig) -> Option<f64> {
    if motion_direction(track, cfg) != Direction::Approaching {
        return None;
    }
    let speed = track.state.horizontal_speed();
    if speed < cfg.min_speed {
        return None;
    }
    Some(track.state.position().horizontal_distance(&cfg.stop_line_position) / speed)
}

/// Greedy gated nearest-neighbor assignment.
///
/// Candidate pairs within `gate` are taken in order of distance, then
/// track id, then detection index; each side is used at most once.
/// Returns `(track index, detection index)` pairs.
pub fn associate(tracks: &[Track], detections: &[Detection], gate: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        let predicted = t.state.position();
        for (di, d) in detections.iter().enumerate() {
            let dist = predicted.distance(&d.position);
            if dist <= gate {
                candidates.push((dist, t.track_id, di, ti));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut pairs = Vec::new();
    for (_, _, di, ti) in candidates {
        if !track_used[ti] && !det_used[di] {
            track_used[ti] = true;
            det_used[di] = true;
            pairs.push((ti, di));
        }
    }
    pairs
}

/// Multi-object tracker; one `step` per frame, in frame order.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub config: SensorSiteConfig,
    pub noise: NoiseParams,
    tracks: Vec<Track>,
    next_id: u64,
    last_timestamp: Option<f64>,
}

impl Tracker {
    pub fn new(config: SensorSiteConfig, noise: NoiseParams) -> Result<Self> {
        config.validate()?;
        noise.validate()?;
        Ok(Self {
            config,
            noise,
            tracks: Vec::new(),
            next_id: 1,
            last_timestamp: None,
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn reportable(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.is_reportable(&self.config))
    }

    /// Advances to `timestamp`; `dt` is taken from the previous step.
    pub fn step(&mut self, timestamp: f64, detections: &[Detection]) -> Result<()> {
        let dt = match self.last_timestamp {
            Some(prev) => {
                let dt = timestamp - prev;
                if !(dt > 0.0) {
                    return Err(Error::invalid(format!(
                        "timestamps must increase: {prev} then {timestamp}"
                    )));
                }
                dt
            }
            // first frame: nothing to predict
            None => f64::NAN,
        };
        let tracks = std::mem::take(&mut self.tracks);
        self.tracks = step_tracker(
            tracks,
            detections,
            dt,
            timestamp,
            &self.config,
            &self.noise,
            &mut self.next_id,
        )?;
        self.last_timestamp = Some(timestamp);
        Ok(())
    }
}

/// One tracker cycle: predict, associate, update, spawn, age out.
///
/// `dt` may be NaN only when `tracks` is empty (first frame).
pub fn step_tracker(
    tracks: Vec<Track>,
    detections: &[Detection],
    dt: f64,
    timestamp: f64,
    cfg: &SensorSiteConfig,
    noise: &NoiseParams,
    next_id: &mut u64,
) -> Result<Vec<Track>> {
    let mut tracks = if tracks.is_empty() {
        tracks
    } else {
        let q = noise.q(dt);
        tracks
            .into_iter()
            .map(|mut t| {
                t.state = kf_predict(&t.state, dt, &q)?;
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?
    };

    let pairs = associate(&tracks, detections, cfg.gate_radius);
    let r = noise.r();
    let mut matched_track = vec![false; tracks.len()];
    let mut matched_det = vec![false; detections.len()];
    for &(ti, di) in &pairs {
        matched_track[ti] = true;
        matched_det[di] = true;
        let t = &mut tracks[ti];
        let upd = kf_update(&t.state, &detections[di].position, &r)?;
        t.state = upd.state;
        t.last_innovation = Some(upd.innovation);
        t.class_votes.add(detections[di].class);
        t.age_frames += 1;
        t.missed_frames = 0;
        t.history.push((timestamp, t.state.position()));
    }

    let mut out = Vec::with_capacity(tracks.len() + detections.len());
    for (t, matched) in tracks.into_iter().zip(matched_track) {
        let mut t = t;
        if !matched {
            t.missed_frames += 1;
            if t.missed_frames > cfg.max_missed {
                continue;
            }
        }
        t.direction = motion_direction(&t, cfg);
        out.push(t);
    }
    for (d, _) in detections.iter().zip(matched_det).filter(|(_, m)| !m) {
        let mut votes = ClassVotes::default();
        votes.add(d.class);
        let state = noise.initial_state(&d.position);
        let mut t = Track {
            track_id: *next_id,
            state,
            class_votes: votes,
            direction: Direction::Unknown,
            age_frames: 1,
            missed_frames: 0,
            history: vec![(timestamp, d.position)],
            last_innovation: None,
        };
        t.direction = motion_direction(&t, cfg);
        *next_id += 1;
        out.push(t);
    }
    Ok(out)
}
