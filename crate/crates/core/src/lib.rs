//! Infrastructure-side LiDAR perception for freight signal priority (FSP).
//!
//! The crate covers the whole roadside chain: tilt correction, cropping and
//! voxel downsampling of raw frames ([`cloud`]), background subtraction
//! ([`background`]), DBSCAN clustering and truck classification
//! ([`cluster`]), constant-velocity Kalman tracking with direction and
//! time-of-arrival estimation ([`tracker`]), LiDAR to ENU extrinsic
//! calibration ([`geo`]), frame-level FSP evaluation ([`eval`]) and the
//! end-to-end pipeline with request emission and a synthetic scene
//! generator ([`pipeline`]).

pub mod background;
pub mod cloud;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod geo;
pub mod io;
pub mod pipeline;
pub mod point;
pub mod spatial;
pub mod tracker;

pub use error::{Error, Result};
pub use point::Point3;
