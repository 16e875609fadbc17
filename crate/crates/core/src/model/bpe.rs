//! Byte-pair-encoding tokenizer over characters.
//!
//! Text is pre-split into chunks of leading whitespace plus a run of
//! non-whitespace, so a space travels with the word after it and the chunks
//! concatenate back to the input.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const PAD: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenizerFile {
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    specials: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeTokenizer {
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
}

/// Splits `text` into whitespace-prefixed chunks; their concatenation is `text`.
pub fn pre_split(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws {
            out.push(&text[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn apply_merge(symbols: &mut Vec<String>, a: &str, b: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == a && symbols[i + 1] == b {
            let right = symbols.remove(i + 1);
            symbols[i].push_str(&right);
        }
        i += 1;
    }
}

impl BpeTokenizer {
    /// Greedy most-frequent-pair merging. Pair ties go to the
    /// lexicographically smallest pair; training stops early once no pair
    /// occurs.
    pub fn train<S: AsRef<str>>(corpus: &[S], n_merges: usize) -> Result<Self, ModelError> {
        if corpus.iter().all(|s| s.as_ref().is_empty()) {
            return Err(ModelError::Tokenizer("empty corpus".into()));
        }
        let mut words: BTreeMap<&str, usize> = BTreeMap::new();
        let mut alphabet = BTreeSet::new();
        for s in corpus {
            for w in pre_split(s.as_ref()) {
                *words.entry(w).or_insert(0) += 1;
                alphabet.extend(w.chars());
            }
        }
        let mut split: Vec<(Vec<String>, usize)> = words
            .into_iter()
            .map(|(w, n)| (w.chars().map(String::from).collect(), n))
            .collect();
        let mut merges = Vec::new();
        for _ in 0..n_merges {
            let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (syms, n) in &split {
                for p in syms.windows(2) {
                    *counts.entry((p[0].as_str(), p[1].as_str())).or_insert(0) += n;
                }
            }
            // BTreeMap iterates pairs in ascending order, so the first
            // maximum is the lexicographically smallest.
            let Some((&(a, b), _)) = counts.iter().fold(None, |best: Option<(&(&str, &str), &usize)>, kv| match best {
                Some(bv) if bv.1 >= kv.1 => Some(bv),
                _ => Some(kv),
            }) else {
                break;
            };
            let (a, b) = (a.to_string(), b.to_string());
            for (syms, _) in &mut split {
                apply_merge(syms, &a, &b);
            }
            merges.push((a, b));
        }
        Ok(Self::from_parts(alphabet.into_iter().collect(), merges))
    }

    fn from_parts(alphabet: Vec<char>, merges: Vec<(String, String)>) -> Self {
        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        vocab.extend(alphabet.iter().map(|c| c.to_string()));
        for (a, b) in &merges {
            let t = format!("{a}{b}");
            if !vocab.contains(&t) {
                vocab.push(t);
            }
        }
        let ids = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self {
            alphabet,
            merges,
            vocab,
            ids,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    /// Token ids of `text`, without special tokens. Characters outside the
    /// alphabet become [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in pre_split(text) {
            let mut syms: Vec<String> = chunk.chars().map(String::from).collect();
            for (a, b) in &self.merges {
                apply_merge(&mut syms, a, b);
            }
            out.extend(syms.iter().map(|s| self.ids.get(s).copied().unwrap_or(UNK)));
        }
        out
    }

    /// `[BOS, tokens.., EOS]` of at most `max_len` ids. Longer inputs are
    /// truncated with a warning, keeping EOS in the final position.
    pub fn encode_for_model(&self, text: &str, max_len: usize) -> Vec<u32> {
        let body = self.encode(text);
        let keep = max_len.saturating_sub(2);
        if body.len() > keep {
            log::warn!("text of {} tokens truncated to {max_len}", body.len() + 2);
        }
        let mut ids = Vec::with_capacity(max_len);
        ids.push(BOS);
        ids.extend(body.into_iter().take(keep));
        ids.push(EOS);
        ids
    }

    /// Concatenates token strings; BOS, EOS and PAD are dropped and UNK
    /// becomes U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            match id {
                BOS | EOS | PAD => {}
                UNK => s.push('\u{FFFD}'),
                _ => s.push_str(self.token(id).unwrap_or("\u{FFFD}")),
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TokenizerFile {
            alphabet: self.alphabet.clone(),
            merges: self.merges.clone(),
            specials: SPECIALS.iter().map(|s| s.to_string()).collect(),
        })
        .expect("tokenizer serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let f: TokenizerFile = serde_json::from_str(s).map_err(|e| ModelError::Tokenizer(e.to_string()))?;
        if f.specials != SPECIALS {
            return Err(ModelError::Tokenizer(format!("unexpected special tokens {:?}", f.specials)));
        }
        Ok(Self::from_parts(f.alphabet, f.merges))
    }
}
