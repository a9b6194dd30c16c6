use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::VehicleClass;
use crate::error::{Error, Result};
use crate::geo::{EnuCoord, GeodeticCoord};
use crate::point::Point3;
use crate::tracker::Direction;

/// One reportable track in one frame. Serialized as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_id: u64,
    pub timestamp: f64,
    pub track_id: u64,
    pub vehicle_class: VehicleClass,
    pub position_lidar: Point3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_enu: Option<EnuCoord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_geodetic: Option<GeodeticCoord>,
    /// Horizontal speed.
    pub speed_mps: f64,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toa_s: Option<f64>,
}

pub fn to_json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("record serializes");
    s.push('\n');
    s
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for item in items {
        f.write_all(to_json_line(item).as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optional_fields_are_omitted() {
        let r = DetectionRecord {
            frame_id: 3,
            timestamp: 0.3,
            track_id: 1,
            vehicle_class: VehicleClass::LongTruck,
            position_lidar: Point3::new(1.0, 2.0, 3.0),
            position_enu: None,
            position_geodetic: None,
            speed_mps: 12.5,
            direction: Direction::Departing,
            toa_s: None,
        };
        let line = to_json_line(&r);
        assert!(!line.contains("position_enu") && !line.contains("toa_s"));
        assert!(line.contains("\"vehicle_class\":\"LongTruck\""));
        let back: DetectionRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn jsonl_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl(&p, &[1u32, 2, 3]).unwrap();
        assert_eq!(read_jsonl::<u32>(&p).unwrap(), vec![1, 2, 3]);
        fs::write(&p, "1\nnope\n").unwrap();
        assert!(matches!(read_jsonl::<u32>(&p), Err(Error::Parse { line: 2, .. })));
    }
}
