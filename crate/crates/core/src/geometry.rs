//! Bounding-box arithmetic for hand/object detections.
//!
//! Coordinates are normalized to `[0, 1]` with the origin at the top-left
//! corner and `y` increasing downward (image convention). Every direction
//! word produced downstream is derived from this convention.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

/// Number of frames sampled from every clip.
pub const FRAMES_PER_CLIP: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid frame dimensions {width}x{height}")]
    InvalidFrame { width: f64, height: f64 },
    #[error("overlap undefined: both boxes have zero area")]
    UndefinedOverlap,
    #[error("clip has no frames")]
    EmptyClip,
    #[error("invalid box [{0}, {1}, {2}, {3}]")]
    InvalidBox(f64, f64, f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<T = f64> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box `(x1, y1, x2, y2)` in normalized frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[T; 4]", into = "[T; 4]")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct BBox<T = f64> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> From<[T; 4]> for BBox<T> {
    fn from(v: [T; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl<T: Scalar> From<BBox<T>> for [T; 4] {
    fn from(b: BBox<T>) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl<T: Scalar> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Checks ordering, finiteness and the unit-square bound.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let c = [self.x1, self.y1, self.x2, self.y2];
        let ok = c.iter().all(|v| v.is_finite() && *v >= T::zero() && *v <= T::one())
            && self.x1 <= self.x2
            && self.y1 <= self.y2;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidBox(
                self.x1.to_f64_lossy(),
                self.y1.to_f64_lossy(),
                self.x2.to_f64_lossy(),
                self.y2.to_f64_lossy(),
            ))
        }
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point<T> {
        center(self)
    }

    /// Smallest box enclosing both `self` and `other`.
    pub fn enclosing(&self, other: &Self) -> Self {
        Self::new(
            self.x1.min(other.x1),
            self.y1.min(other.y1),
            self.x2.max(other.x2),
            self.y2.max(other.y2),
        )
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(T::zero());
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(T::zero());
        w * h
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    fn midpoint(&self, other: &Self) -> Self {
        let two = T::one() + T::one();
        Self::new(
            (self.x1 + other.x1) / two,
            (self.y1 + other.y1) / two,
            (self.x2 + other.x2) / two,
            (self.y2 + other.y2) / two,
        )
    }
}

pub fn center<T: Scalar>(b: &BBox<T>) -> Point<T> {
    let two = T::one() + T::one();
    Point::new((b.x1 + b.x2) / two, (b.y1 + b.y2) / two)
}

/// Divides a pixel-space box by the frame size. Out-of-frame pixels are
/// clamped to the frame before division; coordinates given in reverse order
/// are swapped.
pub fn normalize_box<T: Scalar>(px: [T; 4], width: T, height: T) -> Result<BBox<T>, GeometryError> {
    if !(width > T::zero() && height > T::zero()) || !width.is_finite() || !height.is_finite() {
        return Err(GeometryError::InvalidFrame {
            width: width.to_f64_lossy(),
            height: height.to_f64_lossy(),
        });
    }
    if px.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidBox(
            px[0].to_f64_lossy(),
            px[1].to_f64_lossy(),
            px[2].to_f64_lossy(),
            px[3].to_f64_lossy(),
        ));
    }
    let cx = |v: T| v.max(T::zero()).min(width) / width;
    let cy = |v: T| v.max(T::zero()).min(height) / height;
    let (x1, x2) = (cx(px[0]), cx(px[2]));
    let (y1, y2) = (cy(px[1]), cy(px[3]));
    Ok(BBox::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2)))
}

/// Generalized IoU: `IoU - (|C| - |A ∪ B|) / |C|` with `C` the enclosing box.
pub fn giou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> Result<T, GeometryError> {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return Err(GeometryError::UndefinedOverlap);
    }
    let hull = a.enclosing(b).area();
    Ok(inter / union - (hull - union) / hull)
}

/// Fills single-frame gaps whose two neighbours are both present with the
/// coordinate-wise midpoint. Ends and runs of two or more stay absent.
pub fn interpolate_missing<T: Scalar>(track: &[Option<BBox<T>>]) -> Vec<Option<BBox<T>>> {
    let mut out = track.to_vec();
    for t in 1..track.len().saturating_sub(1) {
        if track[t].is_none() {
            if let (Some(prev), Some(next)) = (track[t - 1], track[t + 1]) {
                out[t] = Some(prev.midpoint(&next));
            }
        }
    }
    out
}

/// Endpoint-inclusive uniform sampling: `round(i * (total - 1) / (n - 1))`
/// with halves rounded up. Duplicates appear when `n > total`.
pub fn sample_frame_indices(total_frames: usize, n: usize) -> Result<Vec<usize>, GeometryError> {
    if total_frames < 1 {
        return Err(GeometryError::EmptyClip);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    let span = (total_frames - 1) as u64;
    let steps = (n - 1) as u64;
    Ok((0..n as u64)
        .map(|i| ((2 * i * span + steps) / (2 * steps)) as usize)
        .collect())
}
