//! Plain-text frame files.
//!
//! ```text
//! # frame_id=<int> timestamp=<float>
//! x y z
//! ...
//! ```
//!
//! A stream is a directory of such files; order is by `frame_id`, not by
//! file name.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::cloud::{FrameTag, PointCloudFrame};
use crate::error::{Error, Result};
use crate::point::Point3;

pub fn format_frame(frame: &PointCloudFrame) -> String {
    let mut s = String::with_capacity(32 + frame.points.len() * 40);
    let _ = writeln!(s, "# frame_id={} timestamp={}", frame.frame_id, frame.timestamp);
    for p in &frame.points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn write_frame(path: &Path, frame: &PointCloudFrame) -> Result<()> {
    fs::write(path, format_frame(frame)).map_err(|e| Error::io(path, e))
}

/// Parses a frame file body. The returned frame is tagged `tag`.
pub fn parse_frame(text: &str, path: &Path, tag: FrameTag) -> Result<PointCloudFrame> {
    let bad = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| bad(1, "missing `# frame_id=... timestamp=...` header".into()))?;
    let mut frame_id = None;
    let mut timestamp = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("frame_id", v)) => {
                frame_id = Some(v.parse::<u64>().map_err(|e| bad(1, format!("frame_id: {e}")))?)
            }
            Some(("timestamp", v)) => {
                timestamp = Some(v.parse::<f64>().map_err(|e| bad(1, format!("timestamp: {e}")))?)
            }
            _ => return Err(bad(1, format!("unexpected header field `{field}`"))),
        }
    }
    let frame_id = frame_id.ok_or_else(|| bad(1, "header lacks frame_id".into()))?;
    let timestamp = timestamp.ok_or_else(|| bad(1, "header lacks timestamp".into()))?;

    let mut points = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        let xyz = match (it.next(), it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), Some(Ok(z)), None) => Point3::new(x, y, z),
            _ => return Err(bad(i + 1, format!("expected `x y z`, got `{line}`"))),
        };
        if !xyz.is_finite() {
            return Err(bad(i + 1, "non-finite coordinate".into()));
        }
        points.push(xyz);
    }
    PointCloudFrame::with_tag(frame_id, timestamp, points, tag)
}

pub fn read_frame(path: &Path) -> Result<PointCloudFrame> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_frame(&text, path, FrameTag::SensorFrame)
}

/// Result of loading a frame directory.
#[derive(Debug, Default)]
pub struct FrameStream {
    pub frames: Vec<PointCloudFrame>,
    /// Files that could not be parsed, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Loads every regular file in `dir` as a frame, ordered by frame_id.
/// Malformed files are logged and reported in `skipped`.
pub fn read_frame_dir(dir: &Path) -> Result<FrameStream> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut stream = FrameStream::default();
    for path in paths {
        match read_frame(&path) {
            Ok(f) => stream.frames.push(f),
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                stream.skipped.push((path, e.to_string()));
            }
        }
    }
    stream.frames.sort_by_key(|f| f.frame_id);
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let frame = PointCloudFrame::new(
            42,
            1_700_000_000.125,
            vec![Point3::new(0.1, -2.5e-7, 1e3), Point3::new(1.0 / 3.0, 0.0, -0.0)],
        )
        .unwrap();
        let text = format_frame(&frame);
        assert!(text.starts_with("# frame_id=42 timestamp=1700000000.125\n"));
        let back = parse_frame(&text, Path::new("mem"), FrameTag::SensorFrame).unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn malformed_inputs() {
        let p = Path::new("mem");
        for text in [
            "",
            "frame_id=1 timestamp=0\n",
            "# frame_id=1\n",
            "# frame_id=x timestamp=0\n",
            "# frame_id=1 timestamp=0\n1 2\n",
            "# frame_id=1 timestamp=0\n1 2 3 4\n",
            "# frame_id=1 timestamp=0\n1 2 nan\n",
        ] {
            assert!(parse_frame(text, p, FrameTag::SensorFrame).is_err(), "{text:?}");
        }
    }

    #[test]
    fn directory_is_ordered_by_frame_id_and_skips_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        for (name, id) in [("a.txt", 3u64), ("b.txt", 1), ("c.txt", 2)] {
            let f = PointCloudFrame::new(id, id as f64, vec![Point3::ORIGIN]).unwrap();
            write_frame(&dir.path().join(name), &f).unwrap();
        }
        fs::write(dir.path().join("junk.txt"), "not a frame").unwrap();
        let stream = read_frame_dir(dir.path()).unwrap();
        let ids: Vec<u64> = stream.frames.iter().map(|f| f.frame_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert_eq!(stream.skipped.len(), 1);
    }
}
