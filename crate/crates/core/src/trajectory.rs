//! Trajectory bundles built from clip detections, and discrete motion
//! summaries for the offline narration path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::ClipDetections;
use crate::geometry::{center, giou, interpolate_missing, BBox, Point};

/// GIoU above which the left- and right-contact objects are treated as one
/// object held by both hands.
pub const DEFAULT_GIOU_THRESHOLD: f64 = 0.9;
/// Net displacement (normalized units) below which an entity is stationary.
pub const DEFAULT_MOTION_EPS: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("{entity:?} trajectory has {present} present points, need at least 2")]
    InsufficientTrack { entity: Entity, present: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entity {
    LeftHand,
    RightHand,
    LeftObj,
    RightObj,
    BothObj,
}

impl Entity {
    pub const ALL: [Entity; 5] = [
        Entity::LeftHand,
        Entity::RightHand,
        Entity::LeftObj,
        Entity::RightObj,
        Entity::BothObj,
    ];

    /// Category label used in the rephraser prompt.
    pub fn prompt_name(self) -> &'static str {
        match self {
            Entity::LeftHand => "left_hand",
            Entity::RightHand => "right_hand",
            Entity::LeftObj => "left_hand_object",
            Entity::RightObj => "right_hand_object",
            Entity::BothObj => "two_hand_object",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub entity: Entity,
    pub points: Vec<Option<Point>>,
}

impl Trajectory {
    pub fn present(&self) -> impl Iterator<Item = &Point> {
        self.points.iter().flatten()
    }

    pub fn is_empty(&self) -> bool {
        self.points.iter().all(Option::is_none)
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self {
            entity: self.entity,
            points,
        }
    }
}

/// Per-frame contact state of a hand: `None` when the hand is not detected.
pub type ContactTrack = Vec<Option<bool>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBundle {
    pub clip_id: String,
    /// Only non-empty trajectories are stored.
    pub trajectories: BTreeMap<Entity, Trajectory>,
    pub original_narration: String,
    pub left_contact: ContactTrack,
    pub right_contact: ContactTrack,
}

impl TrajectoryBundle {
    pub fn get(&self, entity: Entity) -> Option<&Trajectory> {
        self.trajectories.get(&entity)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
    Stationary,
}

impl Direction {
    pub fn word(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Stationary => "still",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
            Direction::Stationary => Direction::Stationary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contact {
    InContact,
    NoContact,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSummary {
    pub entity: Entity,
    pub direction: Direction,
    pub net_displacement: f64,
    pub contact: Contact,
}

fn centers(track: &[Option<BBox>]) -> Vec<Option<Point>> {
    track.iter().map(|b| b.as_ref().map(center)).collect()
}

/// Builds the trajectory bundle for one clip. Hand tracks are gap-filled
/// before center extraction; on each frame with both objects present and
/// `giou(lo, ro) > giou_threshold` the enclosing box center goes to
/// [`Entity::BothObj`] and the per-hand object slots stay empty.
pub fn build_bundle(d: &ClipDetections, narration: &str, giou_threshold: f64) -> TrajectoryBundle {
    let n = d.frames.len();
    let left = interpolate_missing(&d.left_hand_track());
    let right = interpolate_missing(&d.right_hand_track());

    let mut lo = vec![None; n];
    let mut ro = vec![None; n];
    let mut both = vec![None; n];
    for (t, f) in d.frames.iter().enumerate() {
        match (f.left_obj, f.right_obj) {
            (Some(a), Some(b)) if giou(&a, &b).map(|g| g > giou_threshold).unwrap_or(false) => {
                both[t] = Some(center(&a.enclosing(&b)));
            }
            (a, b) => {
                lo[t] = a.as_ref().map(center);
                ro[t] = b.as_ref().map(center);
            }
        }
    }

    let contact = |hand: &[Option<BBox>], obj: fn(&crate::detection::DetectionFrame) -> Option<BBox>| {
        hand.iter()
            .zip(&d.frames)
            .map(|(h, f)| h.map(|_| obj(f).is_some()))
            .collect::<ContactTrack>()
    };
    let left_contact = contact(&left, |f| f.left_obj);
    let right_contact = contact(&right, |f| f.right_obj);

    let mut trajectories = BTreeMap::new();
    for (entity, points) in [
        (Entity::LeftHand, centers(&left)),
        (Entity::RightHand, centers(&right)),
        (Entity::LeftObj, lo),
        (Entity::RightObj, ro),
        (Entity::BothObj, both),
    ] {
        let t = Trajectory { entity, points };
        if !t.is_empty() {
            trajectories.insert(entity, t);
        }
    }

    TrajectoryBundle {
        clip_id: d.clip_id.clone(),
        trajectories,
        original_narration: narration.to_string(),
        left_contact,
        right_contact,
    }
}

/// Majority contact state over the frames where the hand is visible; ties
/// count as in contact. Objects are always in contact by construction.
pub fn majority_contact(entity: Entity, bundle: &TrajectoryBundle) -> Contact {
    let track = match entity {
        Entity::LeftHand => &bundle.left_contact,
        Entity::RightHand => &bundle.right_contact,
        _ => return Contact::InContact,
    };
    let (yes, no) = track.iter().flatten().fold((0, 0), |(y, n), c| if *c { (y + 1, n) } else { (y, n + 1) });
    match (yes, no) {
        (0, 0) => Contact::Unknown,
        (y, n) if y >= n => Contact::InContact,
        _ => Contact::NoContact,
    }
}

/// Reduces a trajectory to its dominant direction from the first to the last
/// present point. Ties between `|dx|` and `|dy|` go to the vertical axis.
pub fn summarize_motion(t: &Trajectory, motion_eps: f64) -> Result<MotionSummary, TrajectoryError> {
    let mut present = t.present();
    let first = present.next();
    let last = present.last();
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) => (f, l),
        _ => {
            return Err(TrajectoryError::InsufficientTrack {
                entity: t.entity,
                present: t.present().count(),
            })
        }
    };
    let dx = last.x - first.x;
    let dy = last.y - first.y;
    let norm = dx.hypot(dy);
    let direction = if norm < motion_eps {
        Direction::Stationary
    } else if dy.abs() >= dx.abs() {
        if dy < 0.0 {
            Direction::Up
        } else {
            Direction::Down
        }
    } else if dx < 0.0 {
        Direction::Left
    } else {
        Direction::Right
    };
    Ok(MotionSummary {
        entity: t.entity,
        direction,
        net_displacement: norm,
        contact: Contact::Unknown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::DetectionFrame;
    use proptest::prelude::*;

    fn clip_with(f: impl Fn(usize, &mut DetectionFrame)) -> ClipDetections {
        let frames = (0..16)
            .map(|i| {
                let mut fr = DetectionFrame::empty(i as u32);
                f(i, &mut fr);
                fr
            })
            .collect();
        ClipDetections {
            clip_id: "c".into(),
            frame_width: 1.0,
            frame_height: 1.0,
            frames,
        }
    }

    fn traj(points: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            entity: Entity::RightHand,
            points: points.iter().map(|&(x, y)| Some(Point::new(x, y))).collect(),
        }
    }

    #[test]
    fn identical_objects_merge() {
        let b = BBox::new(0.4, 0.4, 0.6, 0.6);
        let clip = clip_with(|_, f| {
            f.left_obj = Some(b);
            f.right_obj = Some(b);
        });
        let bundle = build_bundle(&clip, "x", DEFAULT_GIOU_THRESHOLD);
        let both = bundle.get(Entity::BothObj).unwrap();
        assert!(both.points.iter().all(|p| *p == Some(Point::new(0.5, 0.5))));
        assert!(bundle.get(Entity::LeftObj).is_none());
        assert!(bundle.get(Entity::RightObj).is_none());
    }

    #[test]
    fn separated_objects_stay_apart() {
        // giou = 0.1*0.1*2 / 0.3*0.1 ... disjoint boxes with negative giou
        let a = BBox::new(0.0, 0.0, 0.1, 0.1);
        let b = BBox::new(0.3, 0.0, 0.4, 0.1);
        assert!(giou(&a, &b).unwrap() < 0.0);
        let clip = clip_with(|_, f| {
            f.left_obj = Some(a);
            f.right_obj = Some(b);
        });
        let bundle = build_bundle(&clip, "x", DEFAULT_GIOU_THRESHOLD);
        assert!(bundle.get(Entity::BothObj).is_none());
        assert_eq!(bundle.get(Entity::LeftObj).unwrap().points[0], Some(Point::new(0.05, 0.05)));
        assert!(bundle.get(Entity::RightObj).is_some());
    }

    #[test]
    fn absent_hand_is_omitted() {
        let clip = clip_with(|i, f| f.right_hand = Some(BBox::new(0.1, 0.1 + i as f64 * 0.01, 0.2, 0.2 + i as f64 * 0.01)));
        let bundle = build_bundle(&clip, "x", DEFAULT_GIOU_THRESHOLD);
        assert!(bundle.get(Entity::LeftHand).is_none());
        assert!(bundle.get(Entity::RightHand).is_some());
        assert!(bundle.left_contact.iter().all(Option::is_none));
        assert_eq!(majority_contact(Entity::LeftHand, &bundle), Contact::Unknown);
        assert_eq!(majority_contact(Entity::RightHand, &bundle), Contact::NoContact);
    }

    #[test]
    fn hand_gaps_are_filled_before_centering() {
        let clip = clip_with(|i, f| {
            if i != 5 {
                f.left_hand = Some(BBox::new(0.0, 0.0, 0.2, 0.2));
            }
        });
        let bundle = build_bundle(&clip, "x", DEFAULT_GIOU_THRESHOLD);
        assert_eq!(bundle.get(Entity::LeftHand).unwrap().points[5], Some(Point::new(0.1, 0.1)));
    }

    #[test]
    fn per_frame_object_exclusivity() {
        let a = BBox::new(0.4, 0.4, 0.6, 0.6);
        let far = BBox::new(0.0, 0.0, 0.1, 0.1);
        let clip = clip_with(|i, f| {
            f.left_obj = Some(a);
            f.right_obj = Some(if i % 2 == 0 { a } else { far });
        });
        let bundle = build_bundle(&clip, "x", DEFAULT_GIOU_THRESHOLD);
        for t in 0..16 {
            let both = bundle.get(Entity::BothObj).and_then(|tr| tr.points[t]).is_some();
            let lo = bundle.get(Entity::LeftObj).and_then(|tr| tr.points[t]).is_some();
            let ro = bundle.get(Entity::RightObj).and_then(|tr| tr.points[t]).is_some();
            assert!(!(both && (lo || ro)));
            assert_eq!(both, t % 2 == 0);
        }
    }

    #[test]
    fn motion_examples() {
        let s = summarize_motion(&traj(&[(0.5, 0.8), (0.5, 0.2)]), DEFAULT_MOTION_EPS).unwrap();
        assert_eq!(s.direction, Direction::Up);
        let s = summarize_motion(&traj(&[(0.1, 0.5), (0.7, 0.5)]), DEFAULT_MOTION_EPS).unwrap();
        assert_eq!(s.direction, Direction::Right);
        let s = summarize_motion(&traj(&[(0.50, 0.50), (0.52, 0.51)]), DEFAULT_MOTION_EPS).unwrap();
        assert_eq!(s.direction, Direction::Stationary);
        assert!((s.net_displacement - 0.0005f64.sqrt()).abs() < 1e-12);
        // |dx| == |dy| resolves vertically
        let s = summarize_motion(&traj(&[(0.25, 0.25), (0.5, 0.5)]), DEFAULT_MOTION_EPS).unwrap();
        assert_eq!(s.direction, Direction::Down);
    }

    #[test]
    fn motion_needs_two_points() {
        let mut t = traj(&[(0.1, 0.1)]);
        t.points.extend([None, None]);
        assert_eq!(
            summarize_motion(&t, DEFAULT_MOTION_EPS),
            Err(TrajectoryError::InsufficientTrack {
                entity: Entity::RightHand,
                present: 1
            })
        );
    }

    fn arb_track() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.1..0.6f64, 0.1..0.6f64), 2..16)
    }

    proptest! {
        #[test]
        fn motion_translation_invariant(pts in arb_track(), ox in 0.0..0.3f64, oy in 0.0..0.3f64) {
            let a = summarize_motion(&traj(&pts), DEFAULT_MOTION_EPS).unwrap();
            let shifted: Vec<_> = pts.iter().map(|&(x, y)| (x + ox, y + oy)).collect();
            let b = summarize_motion(&traj(&shifted), DEFAULT_MOTION_EPS).unwrap();
            // exact ties and the eps boundary can flip under rounding
            let (dx, dy) = (pts.last().unwrap().0 - pts[0].0, pts.last().unwrap().1 - pts[0].1);
            prop_assume!((dx.abs() - dy.abs()).abs() > 1e-9 && (dx.hypot(dy) - DEFAULT_MOTION_EPS).abs() > 1e-9);
            prop_assert_eq!(a.direction, b.direction);
        }

        #[test]
        fn reversal_flips_direction(pts in arb_track()) {
            let t = traj(&pts);
            let (dx, dy) = (pts.last().unwrap().0 - pts[0].0, pts.last().unwrap().1 - pts[0].1);
            prop_assume!((dx.abs() - dy.abs()).abs() > 1e-12);
            let a = summarize_motion(&t, DEFAULT_MOTION_EPS).unwrap();
            let b = summarize_motion(&t.reversed(), DEFAULT_MOTION_EPS).unwrap();
            prop_assert_eq!(a.direction.opposite(), b.direction);
        }
    }

    #[test]
    fn bundle_serialization_is_deterministic() {
        let a = BBox::new(0.4, 0.4, 0.6, 0.6);
        let clip = clip_with(|i, f| {
            f.left_hand = Some(a.translate(0.0, -(i as f64) * 0.01));
            f.left_obj = Some(a);
        });
        let x = build_bundle(&clip, "C takes a cup", DEFAULT_GIOU_THRESHOLD).to_json();
        let y = build_bundle(&clip, "C takes a cup", DEFAULT_GIOU_THRESHOLD).to_json();
        assert_eq!(x, y);
    }
}
