use rayon::prelude::*;

use super::config::TextField;
use super::synth::PairRecord;
use crate::model::bpe::BpeTokenizer;
use crate::model::{sample_frames, ModelConfig, ModelError};
use crate::num::Scalar;
use crate::train::Example;

pub fn pair_text(p: &PairRecord, field: TextField) -> &str {
    match field {
        TextField::Caption => &p.caption,
        TextField::Narration => &p.narration,
    }
}

/// Decodes, samples and tokenizes pairs in parallel; output keeps input order.
pub fn pairs_to_examples<S: Scalar>(
    pairs: &[PairRecord],
    tokenizer: &BpeTokenizer,
    cfg: &ModelConfig,
    field: TextField,
) -> Result<Vec<Example<S>>, ModelError> {
    if tokenizer.vocab_size() > cfg.vocab_size {
        return Err(ModelError::Config(format!(
            "tokenizer has {} tokens but the model vocabulary is {}",
            tokenizer.vocab_size(),
            cfg.vocab_size
        )));
    }
    pairs
        .par_iter()
        .map(|p| {
            if p.video.size != cfg.image_size || p.video.channels != 3 {
                return Err(ModelError::Input(format!(
                    "clip {}: video is {}x{} with {} channels, model expects {}x{} RGB",
                    p.clip_id, p.video.size, p.video.size, p.video.channels, cfg.image_size, cfg.image_size
                )));
            }
            let video = p.video.to_tensor::<S>().map_err(|e| ModelError::Input(format!("clip {}: {e}", p.clip_id)))?;
            Ok(Example {
                clip_id: p.clip_id.clone(),
                low: sample_frames(&video, cfg.frames)?,
                high: sample_frames(&video, cfg.high_frames())?,
                tokens: tokenizer.encode_for_model(pair_text(p, field), cfg.max_text_len),
            })
        })
        .collect()
}
