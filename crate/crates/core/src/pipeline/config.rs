use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::background::{ForegroundParams, DEFAULT_DEDUP_VOXEL};
use crate::cloud::{RegionOfInterest, TiltAngles, VoxelParams};
use crate::cluster::{ClassifierThresholds, DbscanParams};
use crate::error::{Error, Result};
use crate::tracker::{NoiseParams, SensorSiteConfig};

/// Placement of background subtraction relative to voxel downsampling.
/// Tilt correction and cropping always come first; clustering last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    /// correct → crop → downsample → foreground → cluster
    #[default]
    DownsampleFirst,
    /// correct → crop → foreground → downsample → cluster
    ForegroundFirst,
}

impl StageOrder {
    pub fn stages(self) -> [&'static str; 7] {
        let mid = match self {
            StageOrder::DownsampleFirst => ["voxel_downsample", "extract_foreground"],
            StageOrder::ForegroundFirst => ["extract_foreground", "voxel_downsample"],
        };
        [
            "correct_frame",
            "crop_roi",
            mid[0],
            mid[1],
            "dbscan",
            "classify_vehicle",
            "step_tracker",
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundParams {
    pub dedup_voxel: f64,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        Self {
            dedup_voxel: DEFAULT_DEDUP_VOXEL,
        }
    }
}

/// One JSON document with a section per module. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_site_id")]
    pub site_id: String,
    #[serde(default)]
    pub tilt: TiltAngles,
    pub roi: RegionOfInterest,
    #[serde(default)]
    pub voxel: VoxelParams,
    #[serde(default)]
    pub background: BackgroundParams,
    #[serde(default)]
    pub foreground: ForegroundParams,
    #[serde(default)]
    pub dbscan: DbscanParams,
    #[serde(default)]
    pub classifier: ClassifierThresholds,
    #[serde(default)]
    pub site: SensorSiteConfig,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default)]
    pub extrinsic_path: Option<PathBuf>,
    #[serde(default = "default_frame_rate")]
    pub frame_rate_hz: f64,
    #[serde(default = "default_horizon")]
    pub request_horizon_s: f64,
    #[serde(default = "default_cooldown")]
    pub request_cooldown_s: f64,
    #[serde(default)]
    pub stage_order: StageOrder,
}

fn default_site_id() -> String {
    "site".into()
}

fn default_frame_rate() -> f64 {
    10.0
}

fn default_horizon() -> f64 {
    30.0
}

fn default_cooldown() -> f64 {
    10.0
}

impl PipelineConfig {
    /// Defaults everywhere except the crop region.
    pub fn with_roi(roi: RegionOfInterest) -> Self {
        Self {
            site_id: default_site_id(),
            tilt: TiltAngles::default(),
            roi,
            voxel: VoxelParams::default(),
            background: BackgroundParams::default(),
            foreground: ForegroundParams::default(),
            dbscan: DbscanParams::default(),
            classifier: ClassifierThresholds::default(),
            site: SensorSiteConfig::default(),
            noise: NoiseParams::default(),
            extrinsic_path: None,
            frame_rate_hz: default_frame_rate(),
            request_horizon_s: default_horizon(),
            request_cooldown_s: default_cooldown(),
            stage_order: StageOrder::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tilt.validate()?;
        self.roi.validate()?;
        self.voxel.validate()?;
        if !(self.background.dedup_voxel.is_finite() && self.background.dedup_voxel > 0.0) {
            return Err(Error::invalid("background.dedup_voxel must be > 0"));
        }
        self.foreground.validate()?;
        self.dbscan.validate()?;
        self.classifier.validate()?;
        self.site.validate()?;
        self.noise.validate()?;
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(Error::invalid("frame_rate_hz must be > 0"));
        }
        if !(self.request_horizon_s.is_finite() && self.request_horizon_s > 0.0) {
            return Err(Error::invalid("request_horizon_s must be > 0"));
        }
        if !(self.request_cooldown_s.is_finite() && self.request_cooldown_s >= 0.0) {
            return Err(Error::invalid("request_cooldown_s must be >= 0"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates; a relative `extrinsic_path` is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.extrinsic_path, path.parent()) {
            if p.is_relative() {
                cfg.extrinsic_path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
