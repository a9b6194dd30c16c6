use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::records::DetectionRecord;
use crate::cluster::VehicleClass;
use crate::tracker::Direction;

/// Priority request for the signal controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FSPRequestMessage {
    pub site_id: String,
    pub track_id: u64,
    pub vehicle_class: VehicleClass,
    pub toa_s: f64,
    /// Timestamp of the frame that triggered the request.
    pub issued_at: f64,
    pub sequence_number: u64,
}

/// Applies the request gates and the per-track cooldown.
#[derive(Debug, Clone)]
pub struct RequestEmitter {
    site_id: String,
    horizon_s: f64,
    cooldown_s: f64,
    next_sequence: u64,
    last_issued: HashMap<u64, f64>,
}

impl RequestEmitter {
    pub fn new(site_id: impl Into<String>, horizon_s: f64, cooldown_s: f64) -> Self {
        Self {
            site_id: site_id.into(),
            horizon_s,
            cooldown_s,
            next_sequence: 1,
            last_issued: HashMap::new(),
        }
    }

    pub fn from_config(cfg: &super::PipelineConfig) -> Self {
        Self::new(cfg.site_id.clone(), cfg.request_horizon_s, cfg.request_cooldown_s)
    }

    pub fn emit(&mut self, record: &DetectionRecord) -> Option<FSPRequestMessage> {
        if !record.vehicle_class.is_truck() || record.direction != Direction::Approaching {
            return None;
        }
        let toa = record.toa_s.filter(|t| *t <= self.horizon_s)?;
        if let Some(prev) = self.last_issued.get(&record.track_id) {
            if record.timestamp - prev < self.cooldown_s {
                return None;
            }
        }
        self.last_issued.insert(record.track_id, record.timestamp);
        let sequence_number = self.next_sequence;
        self.next_sequence += 1;
        Some(FSPRequestMessage {
            site_id: self.site_id.clone(),
            track_id: record.track_id,
            vehicle_class: record.vehicle_class,
            toa_s: toa,
            issued_at: record.timestamp,
            sequence_number,
        })
    }
}

pub fn emit_fsp_request(record: &DetectionRecord, emitter: &mut RequestEmitter) -> Option<FSPRequestMessage> {
    emitter.emit(record)
}
