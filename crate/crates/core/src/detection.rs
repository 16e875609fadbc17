//! Per-clip detector output: four optional boxes on each of the sampled frames.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_box, BBox, GeometryError, FRAMES_PER_CLIP};

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("clip {clip_id}: expected {FRAMES_PER_CLIP} frames, found {found}")]
    FrameCount { clip_id: String, found: usize },
    #[error("clip {clip_id}: frame indices must be strictly ascending (frame {index})")]
    FrameOrder { clip_id: String, index: u32 },
    #[error("clip {clip_id}: {source}")]
    Geometry {
        clip_id: String,
        #[source]
        source: GeometryError,
    },
    #[error("malformed detection record: {0}")]
    Json(#[from] serde_json::Error),
}

/// Boxes detected on one sampled frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    #[serde(rename = "i")]
    pub frame_index: u32,
    #[serde(rename = "lh")]
    pub left_hand: Option<BBox>,
    #[serde(rename = "rh")]
    pub right_hand: Option<BBox>,
    #[serde(rename = "lo")]
    pub left_obj: Option<BBox>,
    #[serde(rename = "ro")]
    pub right_obj: Option<BBox>,
}

impl DetectionFrame {
    pub fn empty(frame_index: u32) -> Self {
        Self {
            frame_index,
            left_hand: None,
            right_hand: None,
            left_obj: None,
            right_obj: None,
        }
    }

    fn slots_mut(&mut self) -> [&mut Option<BBox>; 4] {
        [
            &mut self.left_hand,
            &mut self.right_hand,
            &mut self.left_obj,
            &mut self.right_obj,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipDetections {
    pub clip_id: String,
    #[serde(rename = "w")]
    pub frame_width: f64,
    #[serde(rename = "h")]
    pub frame_height: f64,
    pub frames: Vec<DetectionFrame>,
}

impl ClipDetections {
    /// Parses one JSONL line. With `pixels` set, box coordinates are read
    /// in pixel space and normalized by the frame size; otherwise they must
    /// already lie in the unit square.
    pub fn from_json_line(line: &str, pixels: bool) -> Result<Self, DetectionError> {
        let mut clip: ClipDetections = serde_json::from_str(line)?;
        let (w, h) = (clip.frame_width, clip.frame_height);
        let geo = |clip_id: &str, source| DetectionError::Geometry {
            clip_id: clip_id.to_string(),
            source,
        };
        if !(w > 0.0 && h > 0.0) {
            return Err(geo(&clip.clip_id, GeometryError::InvalidFrame { width: w, height: h }));
        }
        let id = clip.clip_id.clone();
        for frame in &mut clip.frames {
            for slot in frame.slots_mut() {
                if let Some(b) = slot.as_mut() {
                    if pixels {
                        *b = normalize_box([b.x1, b.y1, b.x2, b.y2], w, h).map_err(|e| geo(&id, e))?;
                    } else {
                        b.validate().map_err(|e| geo(&id, e))?;
                    }
                }
            }
        }
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        if self.frames.len() != FRAMES_PER_CLIP {
            return Err(DetectionError::FrameCount {
                clip_id: self.clip_id.clone(),
                found: self.frames.len(),
            });
        }
        for pair in self.frames.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(DetectionError::FrameOrder {
                    clip_id: self.clip_id.clone(),
                    index: pair[1].frame_index,
                });
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("detections serialize")
    }

    pub fn left_hand_track(&self) -> Vec<Option<BBox>> {
        self.frames.iter().map(|f| f.left_hand).collect()
    }

    pub fn right_hand_track(&self) -> Vec<Option<BBox>> {
        self.frames.iter().map(|f| f.right_hand).collect()
    }
}
