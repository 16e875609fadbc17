//! Synthetic clips: a bright square (the right hand holding an object)
//! slides across a dark, lightly noisy background. Its box is emitted as
//! the detection record and its direction is named in the caption.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detection::{ClipDetections, DetectionFrame};
use crate::geometry::{BBox, FRAMES_PER_CLIP};
use crate::model::ModelError;
use crate::num::Scalar;
use crate::tensor::Tensor;
use crate::trajectory::Direction;

pub const COLORS: [(&str, [u8; 3]); 4] = [
    ("red", [230, 40, 40]),
    ("green", [40, 220, 60]),
    ("blue", [50, 80, 240]),
    ("yellow", [235, 225, 40]),
];
pub const DIRECTIONS: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Frame side in pixels.
    pub size: usize,
    pub frames: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 16,
            frames: FRAMES_PER_CLIP,
        }
    }
}

/// Raw `[frames, channels, size, size]` u8 pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub frames: usize,
    pub channels: usize,
    pub size: usize,
    pub pixels: Vec<u8>,
}

impl VideoRecord {
    /// `[frames, channels, size, size]` scaled to `[0, 1]`.
    pub fn to_tensor<S: Scalar>(&self) -> Result<Tensor<S>, ModelError> {
        let shape = vec![self.frames, self.channels, self.size, self.size];
        if self.pixels.len() != shape.iter().product::<usize>() {
            return Err(ModelError::Input(format!(
                "video has {} pixels, header says {:?}",
                self.pixels.len(),
                shape
            )));
        }
        let data = self.pixels.iter().map(|&p| S::of(f64::from(p) / 255.0)).collect();
        Ok(Tensor::new(shape, data)?)
    }
}

/// One line of `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub clip_id: String,
    /// Original narration, without motion words.
    pub narration: String,
    /// Training text, naming the motion direction.
    pub caption: String,
    pub video: VideoRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub detections: Vec<ClipDetections>,
    pub pairs: Vec<PairRecord>,
    /// Generated direction of each clip, for checking.
    pub directions: Vec<Direction>,
}

/// Generates `n_clips` clips. Colour/direction combinations cycle through
/// all sixteen in a seeded order, so any 16 consecutive clips are distinct.
pub fn synth_data(seed: u64, n_clips: usize, cfg: &SynthConfig) -> SynthData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut combos: Vec<(usize, usize)> = (0..4).flat_map(|c| (0..4).map(move |d| (c, d))).collect();
    combos.shuffle(&mut rng);
    let s = cfg.size;
    let q = (s / 4).max(1);
    let travel = (s / 2) as f64;
    let mut out = SynthData {
        detections: Vec::with_capacity(n_clips),
        pairs: Vec::with_capacity(n_clips),
        directions: Vec::with_capacity(n_clips),
    };
    for k in 0..n_clips {
        let (ci, di) = combos[k % combos.len()];
        let (color_name, rgb) = COLORS[ci];
        let dir = DIRECTIONS[di];
        let clip_id = format!("synth_{k:05}");
        let room = (s - q) as f64;
        let slack = (room - travel).max(0.0);
        let across = rng.gen_range(0.0..=room);
        let start_along = rng.gen_range(0.0..=slack);
        let (x0, y0, dx, dy) = match dir {
            Direction::Up => (across, room - start_along, 0.0, -travel),
            Direction::Down => (across, start_along, 0.0, travel),
            Direction::Left => (room - start_along, across, -travel, 0.0),
            _ => (start_along, across, travel, 0.0),
        };
        let mut pixels = vec![0u8; cfg.frames * 3 * s * s];
        let mut frames = Vec::with_capacity(cfg.frames);
        for f in 0..cfg.frames {
            let a = if cfg.frames > 1 { f as f64 / (cfg.frames - 1) as f64 } else { 0.0 };
            let x = (x0 + a * dx).round() as usize;
            let y = (y0 + a * dy).round() as usize;
            for c in 0..3 {
                let plane = &mut pixels[(f * 3 + c) * s * s..(f * 3 + c + 1) * s * s];
                for p in plane.iter_mut() {
                    *p = rng.gen_range(0..24);
                }
                for i in y..y + q {
                    for j in x..x + q {
                        plane[i * s + j] = rgb[c];
                    }
                }
            }
            let hand = BBox::new(x as f64, y as f64, (x + q) as f64, (y + q) as f64);
            let obj = BBox::new(
                (x as f64 - 1.0).max(0.0),
                (y as f64 - 1.0).max(0.0),
                ((x + q) as f64 + 1.0).min(s as f64),
                ((y + q) as f64 + 1.0).min(s as f64),
            );
            frames.push(DetectionFrame {
                frame_index: f as u32,
                left_hand: None,
                right_hand: Some(hand),
                left_obj: None,
                right_obj: Some(obj),
            });
        }
        out.detections.push(ClipDetections {
            clip_id: clip_id.clone(),
            frame_width: s as f64,
            frame_height: s as f64,
            frames,
        });
        out.pairs.push(PairRecord {
            clip_id,
            narration: format!("C moves the {color_name} block"),
            caption: format!("C moves the {color_name} block {}", dir.word()),
            video: VideoRecord {
                frames: cfg.frames,
                channels: 3,
                size: s,
                pixels,
            },
        });
        out.directions.push(dir);
    }
    out
}
