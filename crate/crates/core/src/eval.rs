//! Frame-level FSP scoring and timing profiles.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::VehicleClass;
use crate::error::{Error, Result};
use crate::point::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchThresholds {
    pub long_truck_m: f64,
    pub compact_truck_m: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        Self {
            long_truck_m: 10.0,
            compact_truck_m: 4.0,
        }
    }
}

impl MatchThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("long", self.long_truck_m), ("compact", self.compact_truck_m)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} threshold must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Distance threshold for a ground-truth class; `None` for non-trucks.
    pub fn for_class(&self, class: VehicleClass) -> Option<f64> {
        match class {
            VehicleClass::LongTruck => Some(self.long_truck_m),
            VehicleClass::CompactTruck => Some(self.compact_truck_m),
            VehicleClass::NonTruck => None,
        }
    }

    /// Parses `long=10,compact=4`. Missing keys keep their defaults.
    pub fn parse(s: &str) -> Result<Self> {
        let mut th = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got `{part}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|e| Error::invalid(format!("threshold `{part}`: {e}")))?;
            match k.trim() {
                "long" => th.long_truck_m = v,
                "compact" => th.compact_truck_m = v,
                other => return Err(Error::invalid(format!("unknown threshold key `{other}`"))),
            }
        }
        th.validate()?;
        Ok(th)
    }
}

/// One annotated scenario frame with a single primary target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAnnotation {
    pub scenario_id: String,
    pub frame_file: PathBuf,
    pub gt_class: VehicleClass,
    pub gt_position: Point3,
    #[serde(default)]
    pub note: String,
    /// Frame to score; read from the frame file header when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<u64>,
    /// Per-scenario override for sensitivity studies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<MatchThresholds>,
}

pub fn read_annotations(path: &Path) -> Result<Vec<ScenarioAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: ScenarioAnnotation = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !a.gt_position.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "gt_position is not finite".into(),
            });
        }
        if let Some(th) = &a.thresholds {
            th.validate()?;
        }
        out.push(a);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Tp,
    Fp,
    Fn,
    Tn,
}

/// Scores one frame. Non-truck predictions are ignored; class mismatch
/// between truck subtypes still counts as a hit.
pub fn match_frame(
    gt: &ScenarioAnnotation,
    predictions: &[(VehicleClass, Point3)],
    th: &MatchThresholds,
) -> Outcome {
    let th = gt.thresholds.as_ref().unwrap_or(th);
    let mut trucks = predictions.iter().filter(|(c, _)| c.is_truck());
    match th.for_class(gt.gt_class) {
        Some(limit) => {
            let nearest = trucks
                .map(|(_, p)| p.distance(&gt.gt_position))
                .fold(f64::INFINITY, f64::min);
            if nearest <= limit {
                Outcome::Tp
            } else {
                Outcome::Fn
            }
        }
        None => {
            if trucks.next().is_some() {
                Outcome::Fp
            } else {
                Outcome::Tn
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn record(&mut self, o: Outcome) {
        match o {
            Outcome::Tp => self.tp += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Fn => self.fn_ += 1,
            Outcome::Tn => self.tn += 1,
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self::new(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn_ + other.fn_,
            self.tn + other.tn,
        )
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl FromIterator<Outcome> for ConfusionCounts {
    fn from_iter<I: IntoIterator<Item = Outcome>>(iter: I) -> Self {
        let mut c = Self::default();
        for o in iter {
            c.record(o);
        }
        c
    }
}

/// `None` marks an undefined metric (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn compute_metrics(c: &ConfusionCounts) -> MetricsReport {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    MetricsReport { precision, recall, f1 }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.2}"))
}

/// Aligned text table: one header row and one value row.
pub fn metrics_table(c: &ConfusionCounts, m: &MetricsReport) -> String {
    let headers = ["TP", "FP", "FN", "TN", "Precision", "Recall", "F1-score"];
    let values = [
        c.tp.to_string(),
        c.fp.to_string(),
        c.fn_.to_string(),
        c.tn.to_string(),
        cell(m.precision),
        cell(m.recall),
        cell(m.f1),
    ];
    let widths: Vec<usize> = headers
        .iter()
        .zip(&values)
        .map(|(h, v)| h.len().max(v.len()))
        .collect();
    let mut s = String::new();
    for row in [headers.map(String::from).to_vec(), values.to_vec()] {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:>w$}"))
            .collect();
        let _ = writeln!(s, "{}", line.join("  "));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub frame_id: u64,
    pub foreground_points: u64,
    pub processing_seconds: f64,
}

pub const TIMING_CSV_HEADER: &str = "frame_id,foreground_points,processing_seconds";

pub fn format_timing_csv(samples: &[TimingSample]) -> String {
    let mut s = String::from(TIMING_CSV_HEADER);
    s.push('\n');
    for t in samples {
        let _ = writeln!(s, "{},{},{}", t.frame_id, t.foreground_points, t.processing_seconds);
    }
    s
}

pub fn parse_timing_csv(text: &str, path: &Path) -> Result<Vec<TimingSample>> {
    let bad = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("frame_id")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad(i + 1, format!("expected 3 columns, got {}", f.len())));
        }
        let sample = TimingSample {
            frame_id: f[0].parse().map_err(|e| bad(i + 1, format!("frame_id: {e}")))?,
            foreground_points: f[1].parse().map_err(|e| bad(i + 1, format!("foreground_points: {e}")))?,
            processing_seconds: f[2].parse().map_err(|e| bad(i + 1, format!("processing_seconds: {e}")))?,
        };
        if !(sample.processing_seconds.is_finite() && sample.processing_seconds > 0.0) {
            return Err(bad(i + 1, "processing_seconds must be > 0".into()));
        }
        out.push(sample);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub frames: usize,
    pub budget_seconds: f64,
    pub mean_seconds: f64,
    pub max_seconds: f64,
    pub p99_seconds: f64,
    pub fraction_over_budget: f64,
    /// Pearson correlation of foreground points vs time; `None` when
    /// either series is constant.
    pub correlation: Option<f64>,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(&xs[..n]) || constant(&ys[..n]) || sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn profile_report(samples: &[TimingSample], budget_seconds: f64) -> Result<ProfileReport> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no timing samples".into()));
    }
    if !(budget_seconds.is_finite() && budget_seconds > 0.0) {
        return Err(Error::invalid(format!("budget must be > 0, got {budget_seconds}")));
    }
    let times: Vec<f64> = samples.iter().map(|s| s.processing_seconds).collect();
    let counts: Vec<f64> = samples.iter().map(|s| s.foreground_points as f64).collect();
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let n = samples.len();
    Ok(ProfileReport {
        frames: n,
        budget_seconds,
        mean_seconds: times.iter().sum::<f64>() / n as f64,
        max_seconds: sorted[n - 1],
        p99_seconds: percentile(&sorted, 0.99),
        fraction_over_budget: times.iter().filter(|&&t| t > budget_seconds).count() as f64 / n as f64,
        correlation: pearson(&counts, &times),
    })
}
