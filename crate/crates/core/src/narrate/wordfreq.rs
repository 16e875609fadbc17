use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::NarrateError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordFreqTable {
    /// `(token, count / total_tokens)`, highest frequency first, ties in
    /// ascending lexicographic order.
    pub entries: Vec<(String, f64)>,
    pub total_tokens: usize,
    pub vocab_size: usize,
}

impl WordFreqTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("token,frequency\n");
        for (tok, f) in &self.entries {
            out.push_str(tok);
            out.push(',');
            out.push_str(&f.to_string());
            out.push('\n');
        }
        out
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize_words(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

pub fn word_frequency<S: AsRef<str>>(corpus: &[S], k: usize) -> Result<WordFreqTable, NarrateError> {
    if k == 0 {
        return Err(NarrateError::InvalidTopK);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in corpus {
        for w in tokenize_words(line.as_ref()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(NarrateError::EmptyCorpus);
    }
    let vocab_size = counts.len();
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(WordFreqTable {
        entries: ranked
            .into_iter()
            .map(|(w, c)| (w, c as f64 / total as f64))
            .collect(),
        total_tokens: total,
        vocab_size,
    })
}
