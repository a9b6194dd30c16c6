use std::io::{BufRead, Write};

use log::warn;

use super::records::DetectionRecord;
use crate::error::{Error, Result};

/// Copies well-formed record lines from `input` to `output`, flushing
/// after each. Malformed lines are logged and dropped. Returns
/// `(forwarded, rejected)`.
pub fn forward_records<R: BufRead, W: Write>(input: R, mut output: W) -> Result<(usize, usize)> {
    let io = |e| Error::Io {
        path: "<stream>".into(),
        source: e,
    };
    let (mut forwarded, mut rejected) = (0, 0);
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DetectionRecord>(&line) {
            Ok(_) => {
                output.write_all(line.trim_end().as_bytes()).map_err(io)?;
                output.write_all(b"\n").map_err(io)?;
                output.flush().map_err(io)?;
                forwarded += 1;
            }
            Err(e) => {
                warn!("line {}: not a detection record: {e}", i + 1);
                rejected += 1;
            }
        }
    }
    Ok((forwarded, rejected))
}
