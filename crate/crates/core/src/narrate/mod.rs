//! Narration enrichment: prompt rendering, the offline templater, the
//! chat-completion client and corpus word statistics.

mod llm;
mod offline;
mod prompt;
mod wordfreq;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use llm::{rephrase_llm, LlmClient, LlmConfig};
pub use offline::{rephrase_offline, rephrase_offline_with};
pub use prompt::{render_prompt, PromptPayload, CLOSING_INSTRUCTION, SYSTEM_PROMPT};
pub use wordfreq::{tokenize_words, word_frequency, WordFreqTable};

#[derive(Debug, Error)]
pub enum NarrateError {
    #[error("clip {0}: bundle has no trajectories and an empty narration")]
    EmptyBundle(String),
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("endpoint {endpoint} returned HTTP {status}: {body}")]
    Endpoint {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("endpoint {0} returned an empty completion")]
    EmptyResponse(String),
    #[error("word statistics need a non-empty corpus")]
    EmptyCorpus,
    #[error("top-k must be at least 1")]
    InvalidTopK,
}

impl NarrateError {
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            NarrateError::Transport { .. } | NarrateError::Endpoint { .. } | NarrateError::EmptyResponse(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "endpoint", rename_all = "snake_case")]
pub enum Provenance {
    OfflineTemplate,
    ExternalLlm(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrationRecord {
    pub clip_id: String,
    pub original: String,
    pub enriched: String,
    pub provenance: Provenance,
    pub generator_seed: u64,
}
