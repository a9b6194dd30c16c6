//! Seeded synthetic roadside scenes: a flat road with poles and
//! box-shaped vehicles moving at constant velocity.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::records::write_jsonl;
use crate::cloud::{build_rotation, PointCloudFrame, RegionOfInterest, TiltAngles};
use crate::cluster::{ClassifierThresholds, VehicleClass};
use crate::error::{Error, Result};
use crate::io::write_frame;
use crate::point::Point3;
use crate::tracker::SensorSiteConfig;

/// `(length, width, height)` of the box used for each class.
pub fn box_dimensions(class: VehicleClass) -> (f64, f64, f64) {
    match class {
        VehicleClass::LongTruck => (16.0, 2.6, 3.8),
        VehicleClass::CompactTruck => (7.0, 2.6, 3.8),
        VehicleClass::NonTruck => (4.5, 1.8, 1.5),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub class: VehicleClass,
    /// Box center on the road, leveled `(x, y)` at t = 0.
    pub start: [f64; 2],
    /// Ground velocity, m/s.
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSceneParams {
    pub seed: u64,
    pub n_frames: usize,
    #[serde(default = "default_rate")]
    pub frame_rate_hz: f64,
    #[serde(default)]
    pub truck_specs: Vec<VehicleSpec>,
    #[serde(default)]
    pub car_specs: Vec<VehicleSpec>,
    /// Road and pole surface points per m².
    #[serde(default = "default_bg_density")]
    pub background_density: f64,
    /// Vehicle surface points per m².
    #[serde(default = "default_vehicle_density")]
    pub vehicle_density: f64,
    #[serde(default = "default_noise")]
    pub noise_sigma_m: f64,
    /// Sensor height above the road; the road lies at `z = −sensor_height`.
    #[serde(default = "default_sensor_height")]
    pub sensor_height: f64,
    #[serde(default = "default_road_x")]
    pub road_x: [f64; 2],
    #[serde(default = "default_road_y")]
    pub road_y: [f64; 2],
    #[serde(default = "default_poles")]
    pub n_poles: usize,
    /// Stop line `(x, y)` on the road surface.
    #[serde(default = "default_stop_line")]
    pub stop_line: [f64; 2],
    /// Mounting tilt baked into the sensor-frame output.
    #[serde(default)]
    pub tilt: TiltAngles,
    #[serde(default = "default_bg_frames")]
    pub n_background_frames: usize,
    #[serde(default)]
    pub start_time: f64,
}

fn default_rate() -> f64 {
    10.0
}
fn default_bg_density() -> f64 {
    2.3
}
fn default_vehicle_density() -> f64 {
    3.0
}
fn default_noise() -> f64 {
    0.02
}
fn default_sensor_height() -> f64 {
    6.0
}
fn default_road_x() -> [f64; 2] {
    [5.0, 205.0]
}
fn default_road_y() -> [f64; 2] {
    [-15.0, 15.0]
}
fn default_poles() -> usize {
    6
}
fn default_stop_line() -> [f64; 2] {
    [10.0, 0.0]
}
fn default_bg_frames() -> usize {
    10
}

const POLE_RADIUS: f64 = 0.15;
const POLE_HEIGHT: f64 = 8.0;

impl SynthSceneParams {
    pub fn new(seed: u64, n_frames: usize) -> Self {
        Self {
            seed,
            n_frames,
            frame_rate_hz: default_rate(),
            truck_specs: Vec::new(),
            car_specs: Vec::new(),
            background_density: default_bg_density(),
            vehicle_density: default_vehicle_density(),
            noise_sigma_m: default_noise(),
            sensor_height: default_sensor_height(),
            road_x: default_road_x(),
            road_y: default_road_y(),
            n_poles: default_poles(),
            stop_line: default_stop_line(),
            tilt: TiltAngles::default(),
            n_background_frames: default_bg_frames(),
            start_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frame_rate_hz", self.frame_rate_hz),
            ("background_density", self.background_density),
            ("vehicle_density", self.vehicle_density),
            ("sensor_height", self.sensor_height),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.noise_sigma_m.is_finite() && self.noise_sigma_m >= 0.0) {
            return Err(Error::invalid("noise_sigma_m must be >= 0"));
        }
        if !(self.road_x[0] < self.road_x[1] && self.road_y[0] < self.road_y[1]) {
            return Err(Error::invalid("road extent must be increasing"));
        }
        if !self.start_time.is_finite() {
            return Err(Error::invalid("start_time must be finite"));
        }
        self.tilt.validate()?;
        for (label, specs, truck) in [("truck", &self.truck_specs, true), ("car", &self.car_specs, false)] {
            for s in specs {
                if s.class.is_truck() != truck {
                    return Err(Error::invalid(format!("{label}_specs entry has class {}", s.class)));
                }
                if !s.start.iter().chain(&s.velocity).all(|v| v.is_finite()) {
                    return Err(Error::invalid(format!("{label} spec is not finite")));
                }
            }
        }
        Ok(())
    }

    pub fn ground_z(&self) -> f64 {
        -self.sensor_height
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        self.start_time + frame as f64 / self.frame_rate_hz
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleSpec> {
        self.truck_specs.iter().chain(&self.car_specs)
    }

    pub fn stop_line_position(&self) -> Point3 {
        Point3::new(self.stop_line[0], self.stop_line[1], self.ground_z())
    }

    fn pole_positions(&self) -> Vec<[f64; 2]> {
        let [x0, x1] = self.road_x;
        let [y0, y1] = self.road_y;
        (0..self.n_poles)
            .map(|i| {
                let f = (i as f64 + 0.5) / self.n_poles as f64;
                let y = if i % 2 == 0 { y0 + 1.0 } else { y1 - 1.0 };
                [x0 + f * (x1 - x0), y]
            })
            .collect()
    }

    /// A pipeline configuration matched to this scene's geometry.
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let g = self.ground_z();
        let roi = RegionOfInterest::rectangle(
            (self.road_x[0], self.road_x[1]),
            (self.road_y[0], self.road_y[1]),
            (g - 1.0, g + 5.0),
        )?;
        let mut cfg = PipelineConfig::with_roi(roi);
        cfg.tilt = self.tilt;
        cfg.frame_rate_hz = self.frame_rate_hz;
        cfg.classifier = ClassifierThresholds::for_ground(g);
        cfg.site = SensorSiteConfig {
            sensor_position: Point3::ORIGIN,
            stop_line_position: self.stop_line_position(),
            ..SensorSiteConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-frame truth for one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub frame_id: u64,
    pub timestamp: f64,
    pub vehicle_id: usize,
    pub class: VehicleClass,
    /// Box center, leveled frame.
    pub position: Point3,
    pub velocity: Point3,
    /// Seconds until the box center crosses the stop line along its path;
    /// absent once passed or when not moving toward it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_time_s: Option<f64>,
}

fn vehicle_center(p: &SynthSceneParams, spec: &VehicleSpec, t: f64) -> Point3 {
    let (_, _, h) = box_dimensions(spec.class);
    Point3::new(
        spec.start[0] + spec.velocity[0] * t,
        spec.start[1] + spec.velocity[1] * t,
        p.ground_z() + 0.5 * h,
    )
}

pub fn ground_truth(p: &SynthSceneParams, frame: usize) -> Vec<GroundTruthRow> {
    let ts = p.timestamp(frame);
    let t = ts - p.start_time;
    p.vehicles()
        .enumerate()
        .map(|(id, spec)| {
            let c = vehicle_center(p, spec, t);
            let [vx, vy] = spec.velocity;
            let v2 = vx * vx + vy * vy;
            let ahead = (p.stop_line[0] - c.x) * vx + (p.stop_line[1] - c.y) * vy;
            GroundTruthRow {
                frame_id: frame as u64,
                timestamp: ts,
                vehicle_id: id,
                class: spec.class,
                position: c,
                velocity: Point3::new(vx, vy, 0.0),
                arrival_time_s: (v2 > 0.0 && ahead > 0.0).then(|| ahead / v2),
            }
        })
        .collect()
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

fn background_points(p: &SynthSceneParams, rng: &mut ChaCha8Rng, out: &mut Vec<Point3>) {
    let [x0, x1] = p.road_x;
    let [y0, y1] = p.road_y;
    let g = p.ground_z();
    let n = poisson(rng, p.background_density * (x1 - x0) * (y1 - y0));
    for _ in 0..n {
        out.push(Point3::new(rng.random_range(x0..x1), rng.random_range(y0..y1), g));
    }
    let pole_area = 2.0 * std::f64::consts::PI * POLE_RADIUS * POLE_HEIGHT;
    for [px, py] in p.pole_positions() {
        let n = poisson(rng, p.background_density * pole_area);
        for _ in 0..n {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            out.push(Point3::new(
                px + POLE_RADIUS * a.cos(),
                py + POLE_RADIUS * a.sin(),
                g + rng.random_range(0.0..POLE_HEIGHT),
            ));
        }
    }
}

/// Samples the four sides and the roof of an oriented box.
fn vehicle_points(p: &SynthSceneParams, spec: &VehicleSpec, t: f64, rng: &mut ChaCha8Rng, out: &mut Vec<Point3>) {
    let (l, w, h) = box_dimensions(spec.class);
    let c = vehicle_center(p, spec, t);
    let [vx, vy] = spec.velocity;
    let heading = if vx == 0.0 && vy == 0.0 { 0.0 } else { vy.atan2(vx) };
    let (s, co) = heading.sin_cos();
    let (hl, hw, hh) = (0.5 * l, 0.5 * w, 0.5 * h);
    // (area, sampler in box-local coordinates)
    let faces: [(f64, fn(&mut ChaCha8Rng, f64, f64, f64) -> [f64; 3]); 5] = [
        (l * h, |r, hl, hw, hh| [r.random_range(-hl..hl), hw, r.random_range(-hh..hh)]),
        (l * h, |r, hl, hw, hh| [r.random_range(-hl..hl), -hw, r.random_range(-hh..hh)]),
        (w * h, |r, hl, hw, hh| [hl, r.random_range(-hw..hw), r.random_range(-hh..hh)]),
        (w * h, |r, hl, hw, hh| [-hl, r.random_range(-hw..hw), r.random_range(-hh..hh)]),
        (l * w, |r, hl, hw, hh| [r.random_range(-hl..hl), r.random_range(-hw..hw), hh]),
    ];
    for (area, sample) in faces {
        let n = poisson(rng, p.vehicle_density * area);
        for _ in 0..n {
            let [a, b, z] = sample(rng, hl, hw, hh);
            out.push(Point3::new(c.x + co * a - s * b, c.y + s * a + co * b, c.z + z));
        }
    }
}

fn finish(p: &SynthSceneParams, rng: &mut ChaCha8Rng, mut pts: Vec<Point3>, id: u64, ts: f64) -> Result<PointCloudFrame> {
    let rotation = build_rotation(&p.tilt)?;
    let noise = Normal::new(0.0, p.noise_sigma_m).map_err(|e| Error::invalid(e.to_string()))?;
    for q in &mut pts {
        let jitter = Point3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
        *q = rotation.apply(&(*q + jitter));
    }
    PointCloudFrame::new(id, ts, pts)
}

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sensor-frame cloud of scene frame `k`.
pub fn scene_frame(p: &SynthSceneParams, k: usize) -> Result<PointCloudFrame> {
    let mut rng = frame_rng(p.seed, 2 * k as u64);
    let mut pts = Vec::new();
    background_points(p, &mut rng, &mut pts);
    let t = p.timestamp(k) - p.start_time;
    for spec in p.vehicles() {
        vehicle_points(p, spec, t, &mut rng, &mut pts);
    }
    finish(p, &mut rng, pts, k as u64, p.timestamp(k))
}

/// Vehicle-free cloud used to build the background map.
pub fn background_frame(p: &SynthSceneParams, k: usize) -> Result<PointCloudFrame> {
    let mut rng = frame_rng(p.seed, 2 * k as u64 + 1);
    let mut pts = Vec::new();
    background_points(p, &mut rng, &mut pts);
    finish(p, &mut rng, pts, k as u64, p.start_time - 1.0 - k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub frames_dir: PathBuf,
    pub background_dir: PathBuf,
    pub ground_truth: PathBuf,
    pub config: PathBuf,
    pub truck_tracks: usize,
}

/// Writes `frames/`, `background/`, `ground_truth.jsonl` and a matching
/// `config.json` under `out_dir`.
pub fn synth_scene(p: &SynthSceneParams, out_dir: &Path) -> Result<SynthScene> {
    p.validate()?;
    let frames_dir = out_dir.join("frames");
    let background_dir = out_dir.join("background");
    for d in [&frames_dir, &background_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut truth = Vec::new();
    for k in 0..p.n_frames {
        write_frame(&frames_dir.join(format!("frame_{k:06}.txt")), &scene_frame(p, k)?)?;
        truth.extend(ground_truth(p, k));
    }
    for k in 0..p.n_background_frames {
        write_frame(&background_dir.join(format!("bg_{k:06}.txt")), &background_frame(p, k)?)?;
    }
    let gt_path = out_dir.join("ground_truth.jsonl");
    write_jsonl(&gt_path, &truth)?;
    let config = out_dir.join("config.json");
    fs::write(&config, p.pipeline_config()?.to_json() + "\n").map_err(|e| Error::io(&config, e))?;
    Ok(SynthScene {
        frames_dir,
        background_dir,
        ground_truth: gt_path,
        config,
        truck_tracks: p.truck_specs.len(),
    })
}
