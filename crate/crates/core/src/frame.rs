//! 2D keypoint observations and their JSONL encoding.
//!
//! One record per line: `{"frame": n, "kp": [[u, v, c], ...]}` with exactly
//! 12 keypoints in the order documented in [`crate::kinematics`].

use crate::error::{Error, Result};
use crate::kinematics::KEYPOINT_COUNT;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Keypoints with confidence below this are ignored everywhere.
pub const CONFIDENCE_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint2D {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

impl Keypoint2D {
    pub fn new(u: f64, v: f64, confidence: f64) -> Self {
        Keypoint2D { u, v, confidence }
    }

    pub fn is_visible(&self) -> bool {
        self.confidence >= CONFIDENCE_THRESHOLD
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeypointFrame {
    pub frame: usize,
    pub keypoints: [Keypoint2D; KEYPOINT_COUNT],
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame: usize,
    kp: Vec<[f64; 3]>,
}

impl KeypointFrame {
    pub fn new(frame: usize, keypoints: [Keypoint2D; KEYPOINT_COUNT]) -> Result<Self> {
        for (i, k) in keypoints.iter().enumerate() {
            if !(0.0..=1.0).contains(&k.confidence) {
                return Err(Error::InvalidInput(format!(
                    "keypoint {i} confidence {} outside [0, 1]",
                    k.confidence
                )));
            }
            if !(k.u.is_finite() && k.v.is_finite()) {
                return Err(Error::InvalidInput(format!("keypoint {i} is not finite")));
            }
        }
        Ok(KeypointFrame { frame, keypoints })
    }

    pub fn visible_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_visible()).count()
    }

    pub fn to_json_line(&self) -> String {
        let rec = FrameRecord {
            frame: self.frame,
            kp: self
                .keypoints
                .iter()
                .map(|k| [k.u, k.v, k.confidence])
                .collect(),
        };
        serde_json::to_string(&rec).expect("frame serializes")
    }

    /// Parses one JSONL record; `line` is used for error reporting only.
    pub fn from_json_line(text: &str, line: usize) -> Result<Self> {
        let rec: FrameRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.kp.len() != KEYPOINT_COUNT {
            return Err(Error::Parse {
                line,
                message: format!("expected {KEYPOINT_COUNT} keypoints, got {}", rec.kp.len()),
            });
        }
        let mut keypoints = [Keypoint2D::new(0.0, 0.0, 0.0); KEYPOINT_COUNT];
        for (k, [u, v, c]) in keypoints.iter_mut().zip(rec.kp) {
            *k = Keypoint2D::new(u, v, c);
        }
        KeypointFrame::new(rec.frame, keypoints).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })
    }
}

/// Reads keypoint JSONL; blank lines are skipped, line numbers are 1-based.
pub fn read_frames(reader: impl BufRead) -> Result<Vec<KeypointFrame>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(KeypointFrame::from_json_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn write_frames(mut writer: impl Write, frames: &[KeypointFrame]) -> Result<()> {
    for f in frames {
        writeln!(writer, "{}", f.to_json_line())?;
    }
    Ok(())
}
