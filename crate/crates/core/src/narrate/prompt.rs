use serde::{Deserialize, Serialize};

use super::NarrateError;
use crate::trajectory::{ContactTrack, Entity, Trajectory, TrajectoryBundle};

pub const SYSTEM_PROMPT: &str = "Now you are a captioning assistant, you need to generate hand object interaction \
caption and combine them with the origin narration. Given the origin narration \
of the video clip and spatial localization ([x, y]) of hands and objects in the \
clip, please help me describe the direction of motion of the left and right hands, \
their relative relationship to objects and whether they are touching or not. Do not \
mention the pixel info. Two_hand_object means objects with two hands in contact, \
left_hand_object means objects with left hand in contact, right_hand_object means objects with right hand in contact.";

pub const CLOSING_INSTRUCTION: &str = "Please help me summarize the direction of movement of the left hand, \
right hand, and objects, and generate a new caption based on the original caption. It is strictly \
forbidden to mention the frame number and spatial position coordinates in the description.";

const SYSTEM_HEADER: &str = "## System Prompt";
const DYNAMICS_HEADER: &str = "## Hand Object Dynamics";

/// Structured form of the rephraser prompt. `flat` is the single message
/// actually sent; contact tracks ride along for callers that want them but
/// are not part of the message text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub clip_id: String,
    pub system_prompt: String,
    pub category_lines: Vec<(String, String)>,
    pub original_narration: String,
    pub closing_instruction: String,
    pub left_contact: ContactTrack,
    pub right_contact: ContactTrack,
    pub flat: String,
}

fn coordinate_sequence(t: &Trajectory) -> String {
    let pts: Vec<String> = t
        .points
        .iter()
        .map(|p| match p {
            Some(p) => format!("({:.2},{:.2})", p.x, p.y),
            None => "(nan,nan)".to_string(),
        })
        .collect();
    format!("({})", pts.join(","))
}

/// Renders the rephraser prompt. Categories appear in the fixed order
/// left hand, right hand, left/right/two-hand object; absent ones are
/// dropped. The three blocks are separated by one blank line.
pub fn render_prompt(b: &TrajectoryBundle) -> Result<PromptPayload, NarrateError> {
    if b.trajectories.is_empty() && b.original_narration.trim().is_empty() {
        return Err(NarrateError::EmptyBundle(b.clip_id.clone()));
    }
    let category_lines: Vec<(String, String)> = Entity::ALL
        .iter()
        .filter_map(|e| b.get(*e))
        .map(|t| (t.entity.prompt_name().to_string(), coordinate_sequence(t)))
        .collect();

    let mut flat = String::new();
    flat.push_str(SYSTEM_HEADER);
    flat.push('\n');
    flat.push_str(SYSTEM_PROMPT);
    flat.push_str("\n\n");
    flat.push_str(DYNAMICS_HEADER);
    flat.push('\n');
    for (name, seq) in &category_lines {
        flat.push_str(name);
        flat.push(':');
        flat.push_str(seq);
        flat.push('\n');
    }
    flat.push_str("origin narration: ");
    flat.push_str(&b.original_narration);
    flat.push_str("\n\n");
    flat.push_str(SYSTEM_HEADER);
    flat.push('\n');
    flat.push_str(CLOSING_INSTRUCTION);

    Ok(PromptPayload {
        clip_id: b.clip_id.clone(),
        system_prompt: SYSTEM_PROMPT.to_string(),
        category_lines,
        original_narration: b.original_narration.clone(),
        closing_instruction: CLOSING_INSTRUCTION.to_string(),
        left_contact: b.left_contact.clone(),
        right_contact: b.right_contact.clone(),
        flat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use std::collections::BTreeMap;

    fn bundle(entities: &[Entity]) -> TrajectoryBundle {
        let mut trajectories = BTreeMap::new();
        for &e in entities {
            let mut points: Vec<_> = (0..16).map(|i| Some(Point::new(0.5, 0.8 - i as f64 * 0.04))).collect();
            points[3] = None;
            trajectories.insert(e, Trajectory { entity: e, points });
        }
        TrajectoryBundle {
            clip_id: "c".into(),
            trajectories,
            original_narration: "C takes a scissors.".into(),
            left_contact: vec![None; 16],
            right_contact: vec![None; 16],
        }
    }

    #[test]
    fn full_bundle_lists_categories_in_order() {
        let p = render_prompt(&bundle(&Entity::ALL)).unwrap();
        let names: Vec<_> = p.flat.lines().filter_map(|l| l.split_once(":((").map(|(n, _)| n)).collect();
        assert_eq!(
            names,
            ["left_hand", "right_hand", "left_hand_object", "right_hand_object", "two_hand_object"]
        );
        assert!(p.flat.starts_with("## System Prompt\nNow you are a captioning assistant"));
        assert!(p.flat.contains("\n## Hand Object Dynamics\nleft_hand:((0.50,0.80),(0.50,0.76),(0.50,0.72),(nan,nan),"));
        assert!(p.flat.contains("\norigin narration: C takes a scissors.\n\n## System Prompt\nPlease help me summarize the direction of movement"));
        assert!(p.flat.ends_with("coordinates in the description."));
    }

    #[test]
    fn absent_categories_are_omitted() {
        let p = render_prompt(&bundle(&[Entity::RightHand])).unwrap();
        assert!(p.flat.contains("\nright_hand:(("));
        assert!(!p.flat.contains("left_hand:"));
        assert_eq!(p.category_lines.len(), 1);
    }

    #[test]
    fn rendering_is_deterministic() {
        let b = bundle(&[Entity::LeftHand, Entity::BothObj]);
        assert_eq!(render_prompt(&b).unwrap().flat, render_prompt(&b).unwrap().flat);
    }

    #[test]
    fn empty_bundle_rejected() {
        let mut b = bundle(&[]);
        assert!(render_prompt(&b).is_ok());
        b.original_narration.clear();
        assert!(matches!(render_prompt(&b), Err(NarrateError::EmptyBundle(_))));
    }
}
