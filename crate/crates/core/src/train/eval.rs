use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{mcq_accuracy, recall_at_k, retrieval_metrics, McqGroup, RelevanceMatrix, MCQ_CANDIDATES};
use super::step::Example;
use super::TrainError;
use crate::model::EgoVideo;
use crate::num::Scalar;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

/// Unit-norm fused video embeddings, computed in parallel, in input order.
pub fn embed_videos<S: Scalar>(model: &EgoVideo<S>, data: &[Example<S>]) -> Result<Vec<Vec<f64>>, TrainError> {
    data.par_iter()
        .map(|ex| {
            let e = model.embed_video(&ex.low, &ex.high)?;
            Ok(unit(e.into_iter().map(Scalar::to_f64_lossy).collect()))
        })
        .collect()
}

pub fn embed_texts<S: Scalar>(model: &EgoVideo<S>, texts: &[Vec<u32>]) -> Result<Vec<Vec<f64>>, TrainError> {
    texts
        .par_iter()
        .map(|ids| {
            let e = model.embed_text(ids)?;
            Ok(unit(e.into_iter().map(Scalar::to_f64_lossy).collect()))
        })
        .collect()
}

/// Row-major `|a| x |b|` dot products.
pub fn similarity(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()))
        .collect()
}

/// One group per clip: its own caption plus the next four distinct
/// captions in dataset order, with the answer placed at slot `i % 5`.
pub fn build_mcq_groups(videos: &[Vec<f64>], texts: &[Vec<f64>], tokens: &[Vec<u32>]) -> Result<Vec<McqGroup>, TrainError> {
    let n = videos.len();
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let mut distractors = Vec::new();
        let mut j = (i + 1) % n;
        while j != i && distractors.len() < MCQ_CANDIDATES - 1 {
            if tokens[j] != tokens[i] && !distractors.iter().any(|&k: &usize| tokens[k] == tokens[j]) {
                distractors.push(j);
            }
            j = (j + 1) % n;
        }
        if distractors.len() < MCQ_CANDIDATES - 1 {
            return Err(TrainError::Data(format!(
                "multiple choice needs {MCQ_CANDIDATES} distinct captions, found {}",
                distractors.len() + 1
            )));
        }
        let answer = i % MCQ_CANDIDATES;
        let mut candidates: Vec<Vec<f64>> = distractors.iter().map(|&k| texts[k].clone()).collect();
        candidates.insert(answer, texts[i].clone());
        groups.push(McqGroup {
            query: videos[i].clone(),
            candidates,
            answer,
        });
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub pairs: usize,
    pub recall_at_1_video_to_text: f64,
    pub recall_at_1_text_to_video: f64,
    pub map: f64,
    pub ndcg: f64,
    /// `None` when fewer than five distinct captions exist.
    pub mcq_accuracy: Option<f64>,
}

/// Zero-shot retrieval and multiple choice over paired data. Relevance is
/// 1 for every gallery caption identical to the query's own.
pub fn evaluate<S: Scalar>(model: &EgoVideo<S>, data: &[Example<S>]) -> Result<EvalSummary, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Data("no evaluation pairs".into()));
    }
    let tokens: Vec<Vec<u32>> = data.iter().map(|e| e.tokens.clone()).collect();
    let v = embed_videos(model, data)?;
    let t = embed_texts(model, &tokens)?;
    let n = data.len();
    let v2t = similarity(&v, &t);
    let t2v = similarity(&t, &v);
    let rel = RelevanceMatrix::new(
        n,
        n,
        (0..n * n).map(|k| f64::from(u8::from(tokens[k / n] == tokens[k % n]))).collect(),
    )?;
    let r = retrieval_metrics(&v2t, &rel, 0.0)?;
    let mcq = match build_mcq_groups(&v, &t, &tokens) {
        Ok(g) => Some(mcq_accuracy(&g)?),
        Err(TrainError::Data(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalSummary {
        pairs: n,
        recall_at_1_video_to_text: recall_at_k(&v2t, n, 1)?,
        recall_at_1_text_to_video: recall_at_k(&t2v, n, 1)?,
        map: r.map,
        ndcg: r.ndcg,
        mcq_accuracy: mcq,
    })
}
