use super::{NarrationRecord, Provenance};
use crate::trajectory::{
    summarize_motion, Direction, Entity, MotionSummary, TrajectoryBundle, DEFAULT_MOTION_EPS,
};

fn subject(entity: Entity) -> &'static str {
    match entity {
        Entity::LeftHand => "The left hand",
        Entity::RightHand => "The right hand",
        Entity::LeftObj => "The left hand's object",
        Entity::RightObj => "The right hand's object",
        Entity::BothObj => "The object held by both hands",
    }
}

fn clause(s: &MotionSummary) -> String {
    match (s.entity, s.direction) {
        (e, Direction::Stationary) => format!("{} stays still.", subject(e)),
        (Entity::BothObj, d) => format!("Both hands jointly move the object {}.", d.word()),
        (e, d) => format!("{} moves {}.", subject(e), d.word()),
    }
}

pub fn rephrase_offline(b: &TrajectoryBundle) -> NarrationRecord {
    rephrase_offline_with(b, DEFAULT_MOTION_EPS, 0)
}

/// Deterministic template rephraser. Entities with fewer than two present
/// points are skipped; if every remaining entity is stationary a single
/// stillness sentence replaces the per-entity clauses.
pub fn rephrase_offline_with(b: &TrajectoryBundle, motion_eps: f64, seed: u64) -> NarrationRecord {
    let summaries: Vec<MotionSummary> = Entity::ALL
        .iter()
        .filter_map(|e| b.get(*e))
        .filter_map(|t| summarize_motion(t, motion_eps).ok())
        .collect();

    let original = &b.original_narration;
    let enriched = if summaries.is_empty() {
        original.clone()
    } else {
        let mut parts: Vec<String> = if summaries.iter().all(|s| s.direction == Direction::Stationary) {
            vec!["The hands remain mostly still.".to_string()]
        } else {
            summaries.iter().map(clause).collect()
        };
        let mut tail = original.trim_end().to_string();
        if !tail.is_empty() {
            if !tail.ends_with(['.', '!', '?']) {
                tail.push('.');
            }
            parts.push(tail);
        }
        parts.join(" ")
    };

    NarrationRecord {
        clip_id: b.clip_id.clone(),
        original: original.clone(),
        enriched,
        provenance: Provenance::OfflineTemplate,
        generator_seed: seed,
    }
}
