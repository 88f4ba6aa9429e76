use ndarray::Array4;

use super::SequenceMeta;

/// Side length of every network-ready image frame.
pub const FRAME_SIZE: usize = 64;

/// One point-cloud frame: `(x, y, z)` in meters.
///
/// Sensor frame convention: `x` lateral (image right), `y` range along the
/// sensor axis, `z` up with the floor near `z = 0`.
pub type PointFrame = Vec<[f32; 3]>;

#[derive(Debug, Clone, PartialEq)]
pub enum Frames {
    /// `T x C x H x W`, values in `[0, 1]`.
    Image(Array4<f32>),
    Points(Vec<PointFrame>),
}

impl Frames {
    pub fn len(&self) -> usize {
        match self {
            Frames::Image(a) => a.shape()[0],
            Frames::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SequenceError {
    #[error("sequence {0} has no frames")]
    Empty(String),
    #[error("sequence {key}: modality expects {expected} channels, got {got}")]
    ChannelMismatch { key: String, expected: usize, got: usize },
    #[error("sequence {0}: image data stored for a point-cloud modality or vice versa")]
    KindMismatch(String),
    #[error("sequence {0}: non-finite point coordinate")]
    NonFinite(String),
    #[error("sequence {0}: image values outside [0, 1]")]
    OutOfRange(String),
}

/// One subject/view/condition/trial recording in one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitSequence {
    pub meta: SequenceMeta,
    pub frames: Frames,
}

impl GaitSequence {
    pub fn new(meta: SequenceMeta, frames: Frames) -> Result<Self, SequenceError> {
        let key = meta.key();
        if frames.is_empty() {
            return Err(SequenceError::Empty(key));
        }
        match (&frames, meta.modality.channels()) {
            (Frames::Image(a), Some(c)) => {
                if a.shape()[1] != c {
                    return Err(SequenceError::ChannelMismatch {
                        key,
                        expected: c,
                        got: a.shape()[1],
                    });
                }
                if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(SequenceError::OutOfRange(key));
                }
            }
            (Frames::Points(p), None) => {
                if p.iter().flatten().flatten().any(|v| !v.is_finite()) {
                    return Err(SequenceError::NonFinite(key));
                }
            }
            _ => return Err(SequenceError::KindMismatch(key)),
        }
        Ok(GaitSequence { meta, frames })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn image(&self) -> Option<&Array4<f32>> {
        match &self.frames {
            Frames::Image(a) => Some(a),
            Frames::Points(_) => None,
        }
    }

    pub fn points(&self) -> Option<&[PointFrame]> {
        match &self.frames {
            Frames::Points(p) => Some(p),
            Frames::Image(_) => None,
        }
    }
}
