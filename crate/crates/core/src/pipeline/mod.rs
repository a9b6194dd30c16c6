//! End-to-end orchestration: configuration, frame replay, record and
//! request emission, calibration artifacts and the synthetic scene
//! generator.

mod calibration;
mod config;
mod detect;
mod forward;
mod records;
mod request;
pub mod synth;

pub use calibration::{
    calibrate_static, calibrate_trajectory, read_gps_trajectory_csv, read_lidar_trajectory_csv,
    read_static_pairs_csv, ErrorStats, ExtrinsicArtifact, StaticCalibration, TrajectoryReport,
    DEFAULT_RESAMPLE_SPACING,
};
pub use config::{BackgroundParams, PipelineConfig, StageOrder};
pub use detect::{
    build_background_from_frames, level_and_crop, run_detect, FrameOutput, Geolocation, Pipeline, RunOutput,
    RunSummary,
};
pub use forward::forward_records;
pub use records::{read_jsonl, to_json_line, write_jsonl, DetectionRecord};
pub use request::{emit_fsp_request, FSPRequestMessage, RequestEmitter};
