//! Multi-frame background map and adaptive-threshold foreground extraction.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::{voxel_centroids, FrameTag, PointCloudFrame};
use crate::error::{Error, Result};
use crate::io;
use crate::point::Point3;
use crate::spatial::KdTree;

pub const DEFAULT_DEDUP_VOXEL: f64 = 0.1;

/// Static scene merged from several empty-road frames, indexed for
/// nearest-distance queries.
#[derive(Debug, Clone)]
pub struct BackgroundMap {
    index: KdTree,
    pub dedup_voxel: f64,
    pub source_frame_ids: Vec<u64>,
}

/// Sidecar metadata stored next to a persisted background map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundMeta {
    pub dedup_voxel: f64,
    pub source_frame_ids: Vec<u64>,
    pub created_at: String,
}

impl BackgroundMap {
    /// Wraps an already merged point set.
    pub fn from_points(points: Vec<Point3>, dedup_voxel: f64, source_frame_ids: Vec<u64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("background map is empty"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("background point {i} is not finite")));
        }
        Ok(Self {
            index: KdTree::build(points),
            dedup_voxel,
            source_frame_ids,
        })
    }

    pub fn points(&self) -> &[Point3] {
        self.index.points()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Exact Euclidean distance to the nearest background point.
    pub fn nearest_distance(&self, p: &Point3) -> f64 {
        self.index
            .nearest(p)
            .map(|n| n.distance)
            .expect("background map is never empty")
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    /// Writes the points as a frame file at `path` and metadata to
    /// `<path>.meta.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let frame = PointCloudFrame::with_tag(0, 0.0, self.points().to_vec(), FrameTag::LeveledFrame)?;
        io::write_frame(path, &frame)?;
        let meta = BackgroundMeta {
            dedup_voxel: self.dedup_voxel,
            source_frame_ids: self.source_frame_ids.clone(),
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        let sidecar = Self::sidecar_path(path);
        fs::write(&sidecar, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&sidecar, e))
    }

    /// Loads a map written by [`save`](Self::save). A missing sidecar is
    /// tolerated (defaults are used).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let frame = io::parse_frame(&text, path, FrameTag::LeveledFrame)?;
        let sidecar = Self::sidecar_path(path);
        let (dedup, ids) = match fs::read_to_string(&sidecar) {
            Ok(s) => {
                let meta: BackgroundMeta = serde_json::from_str(&s)?;
                (meta.dedup_voxel, meta.source_frame_ids)
            }
            Err(_) => (DEFAULT_DEDUP_VOXEL, Vec::new()),
        };
        Self::from_points(frame.points, dedup, ids)
    }
}

/// Voxel-deduplicated union of leveled (and identically cropped) frames.
pub fn build_background(frames: &[PointCloudFrame], dedup_voxel: f64) -> Result<BackgroundMap> {
    if frames.is_empty() {
        return Err(Error::invalid("background needs at least one frame"));
    }
    if !(dedup_voxel.is_finite() && dedup_voxel > 0.0) {
        return Err(Error::invalid(format!("dedup voxel {dedup_voxel} must be > 0")));
    }
    if let Some(f) = frames.iter().find(|f| f.tag != FrameTag::LeveledFrame) {
        return Err(Error::State(format!(
            "background frame {} is {:?}, expected LeveledFrame",
            f.frame_id, f.tag
        )));
    }
    let all: Vec<Point3> = frames.iter().flat_map(|f| f.points.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::invalid("background frames contain no points"));
    }
    let merged = voxel_centroids(&all, dedup_voxel);
    BackgroundMap::from_points(merged, dedup_voxel, frames.iter().map(|f| f.frame_id).collect())
}

pub fn nearest_background_distance(p: &Point3, map: &BackgroundMap) -> f64 {
    map.nearest_distance(p)
}

/// Optional absolute bounds on the adaptive threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdClamp {
    pub min: f64,
    pub max: f64,
}

impl Default for ThresholdClamp {
    fn default() -> Self {
        Self { min: 0.2, max: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForegroundParams {
    /// Sensitivity in `τ = μ + α·σ`.
    pub alpha: f64,
    /// `None` applies the adaptive threshold unmodified.
    #[serde(default)]
    pub clamp: Option<ThresholdClamp>,
}

impl Default for ForegroundParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            clamp: None,
        }
    }
}

impl ForegroundParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha {} must be > 0", self.alpha)));
        }
        if let Some(c) = self.clamp {
            if !(c.min.is_finite() && c.max.is_finite() && 0.0 <= c.min && c.min <= c.max) {
                return Err(Error::invalid(format!("bad threshold clamp [{}, {}]", c.min, c.max)));
            }
        }
        Ok(())
    }
}

/// Per-frame distance statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForegroundStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct Foreground {
    pub frame: PointCloudFrame,
    pub stats: ForegroundStats,
}

/// Keeps points whose background distance strictly exceeds
/// `τ = μ_d + α·σ_d`, with μ and σ taken over this frame.
pub fn extract_foreground(
    frame: &PointCloudFrame,
    map: &BackgroundMap,
    params: &ForegroundParams,
) -> Result<Foreground> {
    params.validate()?;
    if frame.is_empty() {
        return Ok(Foreground {
            frame: frame.replace_points(Vec::new()),
            stats: ForegroundStats::default(),
        });
    }
    let distances: Vec<f64> = frame.points.iter().map(|p| map.nearest_distance(p)).collect();
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let std_dev = var.sqrt();
    let mut threshold = mean + params.alpha * std_dev;
    if let Some(c) = params.clamp {
        threshold = threshold.clamp(c.min, c.max);
    }
    let points = frame
        .points
        .iter()
        .zip(&distances)
        .filter(|(_, &d)| d > threshold)
        .map(|(p, _)| *p)
        .collect();
    Ok(Foreground {
        frame: frame.replace_points(points),
        stats: ForegroundStats {
            mean,
            std_dev,
            threshold,
        },
    })
}
