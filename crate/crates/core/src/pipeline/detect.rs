use std::path::PathBuf;
use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::calibration::ExtrinsicArtifact;
use super::config::{PipelineConfig, StageOrder};
use super::records::DetectionRecord;
use super::request::{FSPRequestMessage, RequestEmitter};
use crate::background::{build_background, extract_foreground, BackgroundMap};
use crate::cloud::{build_rotation, correct_frame, crop_roi, voxel_downsample, PointCloudFrame, Rotation3};
use crate::cluster::{classify_vehicle, detect_clusters};
use crate::error::{Error, Result};
use crate::eval::TimingSample;
use crate::geo::{apply_extrinsic, enu_to_geodetic, EnuReference, RigidTransform3D};
use crate::io::FrameStream;
use crate::tracker::{estimate_toa, motion_direction, Detection, Tracker};

/// Loaded extrinsic ready for per-point use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geolocation {
    pub transform: RigidTransform3D,
    pub reference: EnuReference,
}

impl Geolocation {
    pub fn from_artifact(a: &ExtrinsicArtifact) -> Result<Self> {
        Ok(Self {
            transform: a.transform()?,
            reference: a.reference()?,
        })
    }
}

/// Correct → crop; the shared front end of detection and background building.
pub fn level_and_crop(frame: &PointCloudFrame, rotation: &Rotation3, cfg: &PipelineConfig) -> Result<PointCloudFrame> {
    crop_roi(&correct_frame(frame, rotation)?, &cfg.roi)
}

/// Builds a background map from empty-scene frames using the config's
/// tilt and crop region.
pub fn build_background_from_frames(cfg: &PipelineConfig, frames: &[PointCloudFrame]) -> Result<BackgroundMap> {
    cfg.validate()?;
    let rotation = build_rotation(&cfg.tilt)?;
    let leveled = frames
        .iter()
        .map(|f| level_and_crop(f, &rotation, cfg))
        .collect::<Result<Vec<_>>>()?;
    build_background(&leveled, cfg.background.dedup_voxel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub records: Vec<DetectionRecord>,
    pub timing: TimingSample,
    pub clusters: usize,
}

/// Per-frame detection and tracking state.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    rotation: Rotation3,
    background: BackgroundMap,
    geolocation: Option<Geolocation>,
    tracker: Tracker,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, background: BackgroundMap, geolocation: Option<Geolocation>) -> Result<Self> {
        config.validate()?;
        if background.is_empty() {
            return Err(Error::InsufficientData("background map is empty".into()));
        }
        let rotation = build_rotation(&config.tilt)?;
        let tracker = Tracker::new(config.site.clone(), config.noise.clone())?;
        Ok(Self {
            config,
            rotation,
            background,
            geolocation,
            tracker,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Runs every stage on one frame. Frames must arrive in timestamp order.
    pub fn process_frame(&mut self, frame: &PointCloudFrame) -> Result<FrameOutput> {
        let start = Instant::now();
        let cfg = &self.config;
        let cropped = level_and_crop(frame, &self.rotation, cfg)?;
        let foreground = match cfg.stage_order {
            StageOrder::DownsampleFirst => {
                let down = voxel_downsample(&cropped, &cfg.voxel)?;
                extract_foreground(&down, &self.background, &cfg.foreground)?.frame
            }
            StageOrder::ForegroundFirst => {
                let fg = extract_foreground(&cropped, &self.background, &cfg.foreground)?.frame;
                voxel_downsample(&fg, &cfg.voxel)?
            }
        };
        let clusters = detect_clusters(&foreground.points, &cfg.dbscan)?;
        let detections: Vec<Detection> = clusters
            .iter()
            .map(|c| Detection {
                position: c.centroid,
                class: classify_vehicle(c, &cfg.classifier),
            })
            .collect();
        self.tracker.step(frame.timestamp, &detections)?;

        let site = &self.tracker.config;
        let mut records = Vec::new();
        for t in self.tracker.tracks() {
            // only tracks confirmed by a detection in this frame
            if !t.is_reportable(site) || t.missed_frames > 0 {
                continue;
            }
            let position = t.state.position();
            let direction = motion_direction(t, site);
            let (position_enu, position_geodetic) = match &self.geolocation {
                Some(g) => {
                    let enu = apply_extrinsic(&g.transform, &position);
                    (Some(enu), Some(enu_to_geodetic(&enu, &g.reference)?))
                }
                None => (None, None),
            };
            records.push(DetectionRecord {
                frame_id: frame.frame_id,
                timestamp: frame.timestamp,
                track_id: t.track_id,
                vehicle_class: t.class(),
                position_lidar: position,
                position_enu,
                position_geodetic,
                speed_mps: t.state.horizontal_speed(),
                direction,
                toa_s: estimate_toa(t, site),
            });
        }
        let elapsed = start.elapsed().as_secs_f64().max(1e-9);
        debug!(
            "frame {}: {} fg points, {} clusters, {} records, {:.4}s",
            frame.frame_id,
            foreground.len(),
            clusters.len(),
            records.len(),
            elapsed
        );
        Ok(FrameOutput {
            timing: TimingSample {
                frame_id: frame.frame_id,
                foreground_points: foreground.len() as u64,
                processing_seconds: elapsed,
            },
            clusters: clusters.len(),
            records,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames_processed: usize,
    pub frames_skipped: usize,
    pub skipped: Vec<(PathBuf, String)>,
    pub records: usize,
    pub requests: usize,
    pub stages: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub records: Vec<DetectionRecord>,
    pub requests: Vec<FSPRequestMessage>,
    pub timing: Vec<TimingSample>,
    pub summary: RunSummary,
}

/// Replays a frame stream through the pipeline, emitting requests as
/// records appear. Frames that fail a stage are skipped and summarized.
pub fn run_detect(
    config: &PipelineConfig,
    stream: &FrameStream,
    background: BackgroundMap,
    geolocation: Option<Geolocation>,
) -> Result<RunOutput> {
    let mut pipeline = Pipeline::new(config.clone(), background, geolocation)?;
    let mut emitter = RequestEmitter::from_config(config);
    let mut out = RunOutput {
        summary: RunSummary {
            skipped: stream.skipped.clone(),
            frames_skipped: stream.skipped.len(),
            stages: config.stage_order.stages().iter().map(|s| s.to_string()).collect(),
            ..RunSummary::default()
        },
        ..RunOutput::default()
    };
    for frame in &stream.frames {
        match pipeline.process_frame(frame) {
            Ok(f) => {
                for r in &f.records {
                    if let Some(m) = emitter.emit(r) {
                        out.requests.push(m);
                    }
                }
                out.records.extend(f.records);
                out.timing.push(f.timing);
                out.summary.frames_processed += 1;
            }
            Err(e) => {
                warn!("frame {} skipped: {e}", frame.frame_id);
                out.summary.frames_skipped += 1;
                out.summary
                    .skipped
                    .push((PathBuf::from(format!("frame_id={}", frame.frame_id)), e.to_string()));
            }
        }
    }
    out.summary.records = out.records.len();
    out.summary.requests = out.requests.len();
    Ok(out)
}
