use serde::Serialize;

use super::TrainError;

pub const MCQ_CANDIDATES: usize = 5;

/// `Q x G` non-negative relevance grades, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMatrix {
    pub queries: usize,
    pub gallery: usize,
    pub rel: Vec<f64>,
}

impl RelevanceMatrix {
    pub fn new(queries: usize, gallery: usize, rel: Vec<f64>) -> Result<Self, TrainError> {
        if rel.len() != queries * gallery {
            return Err(TrainError::Shape(format!(
                "relevance has {} entries, expected {queries}x{gallery}",
                rel.len()
            )));
        }
        if let Some(v) = rel.iter().find(|v| !(**v >= 0.0)) {
            return Err(TrainError::Data(format!("relevance grade {v} is negative or NaN")));
        }
        Ok(Self { queries, gallery, rel })
    }

    /// Identity relevance: query `i` matches gallery item `i` only.
    pub fn identity(n: usize) -> Self {
        let mut rel = vec![0.0; n * n];
        for i in 0..n {
            rel[i * n + i] = 1.0;
        }
        Self {
            queries: n,
            gallery: n,
            rel,
        }
    }

    fn row(&self, q: usize) -> &[f64] {
        &self.rel[q * self.gallery..(q + 1) * self.gallery]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub map: f64,
    pub ndcg: f64,
    /// Queries without a positive item, left out of the averages.
    pub skipped_queries: usize,
    pub queries: usize,
}

/// Gallery indices by descending score, ties to the lower index.
pub fn ranking(scores: &[f64]) -> Result<Vec<usize>, TrainError> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TrainError::Numerical("NaN similarity score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN").then(a.cmp(&b)));
    Ok(idx)
}

/// Average precision of a ranking over binary labels; `None` without positives.
pub fn average_precision(order: &[usize], positive: &[bool]) -> Option<f64> {
    let total = positive.iter().filter(|p| **p).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &g) in order.iter().enumerate() {
        if positive[g] {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains.enumerate().map(|(r, g)| g / ((r + 2) as f64).log2()).sum()
}

/// mAP over relevance binarised at `rel > threshold` and nDCG with the raw
/// grades as gains. Queries with no positive (or an all-zero row for nDCG)
/// are skipped with a warning.
pub fn retrieval_metrics(sim: &[f64], rel: &RelevanceMatrix, threshold: f64) -> Result<RetrievalReport, TrainError> {
    if sim.len() != rel.queries * rel.gallery {
        return Err(TrainError::Shape(format!(
            "similarity has {} entries, relevance is {}x{}",
            sim.len(),
            rel.queries,
            rel.gallery
        )));
    }
    let (mut ap_sum, mut ndcg_sum, mut used, mut skipped) = (0.0, 0.0, 0usize, 0usize);
    for q in 0..rel.queries {
        let row = rel.row(q);
        let order = ranking(&sim[q * rel.gallery..(q + 1) * rel.gallery])?;
        let positive: Vec<bool> = row.iter().map(|r| *r > threshold).collect();
        let mut ideal = row.to_vec();
        ideal.sort_by(|a, b| b.partial_cmp(a).expect("grades are not NaN"));
        let idcg = dcg(ideal.into_iter());
        match average_precision(&order, &positive) {
            Some(ap) if idcg > 0.0 => {
                ap_sum += ap;
                ndcg_sum += dcg(order.iter().map(|&g| row[g])) / idcg;
                used += 1;
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} of {} queries have no relevant item and were skipped", rel.queries);
    }
    if used == 0 {
        return Err(TrainError::Data("no query has a relevant item".into()));
    }
    Ok(RetrievalReport {
        map: ap_sum / used as f64,
        ndcg: ndcg_sum / used as f64,
        skipped_queries: skipped,
        queries: rel.queries,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, x) in v.iter().enumerate() {
        if best.is_none_or(|b| *x > v[b]) {
            best = Some(i);
        }
    }
    best
}

/// Fraction of queries whose paired item (`i <-> i`) is among the top `k`
/// of row `i` of a square `n x n` score matrix.
pub fn recall_at_k(sim: &[f64], n: usize, k: usize) -> Result<f64, TrainError> {
    if n == 0 || sim.len() != n * n {
        return Err(TrainError::Shape(format!("recall needs a square matrix, got {} entries", sim.len())));
    }
    let mut hits = 0;
    for q in 0..n {
        let order = ranking(&sim[q * n..(q + 1) * n])?;
        if order.iter().take(k).any(|&g| g == q) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McqGroup {
    pub query: Vec<f64>,
    pub candidates: Vec<Vec<f64>>,
    pub answer: usize,
}

pub fn mcq_predict(group: &McqGroup) -> Result<usize, TrainError> {
    if group.candidates.len() != MCQ_CANDIDATES {
        return Err(TrainError::Shape(format!(
            "multiple choice needs {MCQ_CANDIDATES} candidates, got {}",
            group.candidates.len()
        )));
    }
    let s: Vec<f64> = group.candidates.iter().map(|c| dot(&group.query, c)).collect();
    if s.iter().any(|v| v.is_nan()) {
        return Err(TrainError::Numerical("NaN similarity score".into()));
    }
    Ok(argmax(&s).expect("five candidates"))
}

pub fn mcq_accuracy(groups: &[McqGroup]) -> Result<f64, TrainError> {
    if groups.is_empty() {
        return Err(TrainError::Data("no multiple-choice groups".into()));
    }
    let mut correct = 0;
    for g in groups {
        if mcq_predict(g)? == g.answer {
            correct += 1;
        }
    }
    Ok(correct as f64 / groups.len() as f64)
}

/// Class whose text embedding has the largest dot product with `ev`.
pub fn zeroshot_classify(ev: &[f64], class_embeddings: &[Vec<f64>]) -> Result<usize, TrainError> {
    if class_embeddings.is_empty() {
        return Err(TrainError::Config("no classes to choose from".into()));
    }
    let s: Vec<f64> = class_embeddings.iter().map(|c| dot(ev, c)).collect();
    if s.iter().any(|v| v.is_nan()) {
        return Err(TrainError::Numerical("NaN similarity score".into()));
    }
    Ok(argmax(&s).expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_ranking() {
        let rel = RelevanceMatrix::identity(3);
        let sim = [0.9, 0.1, 0.0, 0.2, 0.8, 0.1, 0.0, 0.3, 0.7];
        let r = retrieval_metrics(&sim, &rel, 0.0).unwrap();
        assert_eq!((r.map, r.ndcg), (1.0, 1.0));
    }

    #[test]
    fn single_relevant_at_rank_r() {
        for r in 1..=6 {
            let mut sim = vec![0.0; 6];
            for (i, s) in sim.iter_mut().enumerate() {
                *s = -(i as f64);
            }
            let mut rel = vec![0.0; 6];
            rel[r - 1] = 1.0;
            let rep = retrieval_metrics(&sim, &RelevanceMatrix::new(1, 6, rel).unwrap(), 0.0).unwrap();
            assert!((rep.map - 1.0 / r as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn skips_queries_without_positives() {
        let rel = RelevanceMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let r = retrieval_metrics(&[1.0, 0.0, 0.5, 0.5], &rel, 0.0).unwrap();
        assert_eq!(r.skipped_queries, 1);
        assert_eq!(r.map, 1.0);
        let none = RelevanceMatrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(retrieval_metrics(&[0.0, 0.0], &none, 0.0).is_err());
        assert!(RelevanceMatrix::new(1, 2, vec![0.0, -1.0]).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(ranking(&[0.5, 0.7, 0.5, 0.7]).unwrap(), vec![1, 3, 0, 2]);
        assert!(ranking(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn recall() {
        let sim = [1.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!((recall_at_k(&sim, 3, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall_at_k(&sim, 3, 2).unwrap(), 1.0);
    }

    #[test]
    fn mcq_rules() {
        let q = vec![1.0, 0.0];
        let orth = vec![0.0, 1.0];
        let g = McqGroup {
            query: q.clone(),
            candidates: vec![orth.clone(), orth.clone(), q.clone(), orth.clone(), orth.clone()],
            answer: 2,
        };
        assert_eq!(mcq_accuracy(&[g]).unwrap(), 1.0);
        let same = McqGroup {
            query: q.clone(),
            candidates: vec![orth.clone(); 5],
            answer: 3,
        };
        assert_eq!(mcq_predict(&same).unwrap(), 0);
        let short = McqGroup {
            query: q,
            candidates: vec![orth; 4],
            answer: 0,
        };
        assert!(matches!(mcq_predict(&short), Err(TrainError::Shape(_))));
    }

    #[test]
    fn mcq_random_is_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut unit = || {
            let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let groups: Vec<McqGroup> = (0..1000)
            .map(|i| McqGroup {
                query: unit(),
                candidates: (0..5).map(|_| unit()).collect(),
                answer: i % 5,
            })
            .collect();
        let acc = mcq_accuracy(&groups).unwrap();
        assert!((acc - 0.2).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn zeroshot_rules() {
        assert_eq!(zeroshot_classify(&[1.0], &[vec![-5.0]]).unwrap(), 0);
        assert_eq!(zeroshot_classify(&[1.0, 0.0], &[vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap(), 0);
        assert!(matches!(zeroshot_classify(&[1.0], &[]), Err(TrainError::Config(_))));
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(scores in proptest::collection::vec(-3.0f64..3.0, 16), rel in proptest::collection::vec(0u8..3, 16)) {
            let rel = RelevanceMatrix::new(2, 8, rel.into_iter().map(f64::from).collect()).unwrap();
            prop_assume!((0..2).all(|q| rel.row(q).iter().any(|r| *r > 0.0)));
            let a = retrieval_metrics(&scores, &rel, 0.0).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
            let b = retrieval_metrics(&t, &rel, 0.0).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
