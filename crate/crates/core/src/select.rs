//! Ego-style clip filtering with a two-layer MLP over precomputed clip
//! features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

const MAGIC: &[u8; 6] = b"HODCLF";
pub const CLASSIFIER_FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("labels must contain both classes with at least 2 examples each (got {negatives} negative, {positives} positive)")]
    DegenerateLabels { positives: usize, negatives: usize },
    #[error("feature dimension mismatch: expected {expected}, found {found} (clip {clip_id})")]
    Shape {
        expected: usize,
        found: usize,
        clip_id: String,
    },
    #[error("clip {0} has no feature vector")]
    IncompleteRecord(String),
    #[error("clip {0} has no label")]
    MissingLabel(String),
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("unsupported classifier file version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt classifier file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Ego4d,
    How2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub source: Source,
    pub narration: String,
    pub feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

/// `sigmoid(relu(x W1 + b1) W2 + b2)` with `W1: F x H` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier<S = f64> {
    pub input_dim: usize,
    pub hidden: usize,
    pub w1: Vec<S>,
    pub b1: Vec<S>,
    pub w2: Vec<S>,
    pub b2: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 0.5,
            epochs: 2000,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport<S> {
    pub classifier: MlpClassifier<S>,
    pub val_accuracy: f64,
    pub loss_trace: Vec<S>,
    pub train_size: usize,
    pub val_size: usize,
}

fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

impl<S: Scalar> MlpClassifier<S> {
    fn hidden_into(&self, x: &[S], h: &mut [S]) {
        for (j, hj) in h.iter_mut().enumerate() {
            let mut z = self.b1[j];
            for (i, xi) in x.iter().enumerate() {
                z = z + *xi * self.w1[i * self.hidden + j];
            }
            *hj = z.max(S::zero());
        }
    }

    fn logit_from_hidden(&self, h: &[S]) -> S {
        h.iter().zip(&self.w2).fold(self.b2, |acc, (a, b)| acc + *a * *b)
    }

    pub fn score(&self, x: &[S]) -> S {
        let mut h = vec![S::zero(); self.hidden];
        self.hidden_into(x, &mut h);
        sigmoid(self.logit_from_hidden(&h))
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CLASSIFIER_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        for v in self.w1.iter().chain(&self.b1).chain(&self.w2).chain(std::iter::once(&self.b2)) {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SelectError> {
        if bytes.len() < 16 || &bytes[..6] != MAGIC {
            return Err(SelectError::Corrupt("missing header".into()));
        }
        let version = u16::from_le_bytes([bytes[6], bytes[7]]);
        if version != CLASSIFIER_FORMAT_VERSION {
            return Err(SelectError::UnsupportedVersion(version));
        }
        let f = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let n = f * h + 2 * h + 1;
        let body = &bytes[16..];
        if body.len() != 4 * n {
            return Err(SelectError::Corrupt(format!(
                "expected {} parameter bytes, found {}",
                4 * n,
                body.len()
            )));
        }
        let vals: Vec<S> = body
            .chunks_exact(4)
            .map(|c| S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Ok(Self {
            input_dim: f,
            hidden: h,
            w1: vals[..f * h].to_vec(),
            b1: vals[f * h..f * h + h].to_vec(),
            w2: vals[f * h + h..f * h + 2 * h].to_vec(),
            b2: vals[n - 1],
        })
    }
}

/// Trains with full-batch gradient descent on binary cross-entropy.
///
/// Features are standardized with training-split statistics during
/// optimization; the affine map is folded back into `W1`/`b1` so the
/// returned classifier consumes raw features.
pub fn train_classifier<S: Scalar>(
    features: &[Vec<S>],
    labels: &[u8],
    cfg: &ClassifierConfig,
) -> Result<TrainReport<S>, SelectError> {
    if cfg.hidden == 0 {
        return Err(SelectError::Config("hidden width must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(SelectError::Config(format!("val_fraction {} outside [0, 1)", cfg.val_fraction)));
    }
    if features.len() != labels.len() {
        return Err(SelectError::Config(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.iter().filter(|&&l| l == 0).count();
    if positives < 2 || negatives < 2 || positives + negatives != labels.len() {
        return Err(SelectError::DegenerateLabels { positives, negatives });
    }
    let dim = features[0].len();
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(SelectError::Shape {
                expected: dim,
                found: f.len(),
                clip_id: format!("#{i}"),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((features.len() as f64) * cfg.val_fraction).round() as usize;
    let n_val = n_val.min(features.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let n_train = train_idx.len();
    let nt = S::of(n_train as f64);
    let mut mean = vec![S::zero(); dim];
    let mut std = vec![S::zero(); dim];
    for &i in train_idx {
        for d in 0..dim {
            mean[d] = mean[d] + features[i][d] / nt;
        }
    }
    for &i in train_idx {
        for d in 0..dim {
            let c = features[i][d] - mean[d];
            std[d] = std[d] + c * c / nt;
        }
    }
    for s in &mut std {
        *s = if *s > S::of(1e-24) { s.sqrt() } else { S::one() };
    }
    let xs: Vec<Vec<S>> = train_idx
        .iter()
        .map(|&i| (0..dim).map(|d| (features[i][d] - mean[d]) / std[d]).collect())
        .collect();
    let ys: Vec<S> = train_idx.iter().map(|&i| S::of(labels[i] as f64)).collect();

    let h = cfg.hidden;
    let scale = (2.0 / dim.max(1) as f64).sqrt();
    let mut clf = MlpClassifier {
        input_dim: dim,
        hidden: h,
        w1: (0..dim * h).map(|_| S::of(rng.gen_range(-1.0..1.0) * scale)).collect(),
        b1: (0..h).map(|_| S::of(rng.gen_range(0.0..0.1))).collect(),
        w2: (0..h).map(|_| S::of(rng.gen_range(-1.0..1.0) * (1.0 / h as f64).sqrt())).collect(),
        b2: S::zero(),
    };

    let lr = S::of(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut hid = vec![S::zero(); h];
    let eps = S::of(1e-12);
    for _ in 0..cfg.epochs {
        let mut gw1 = vec![S::zero(); dim * h];
        let mut gb1 = vec![S::zero(); h];
        let mut gw2 = vec![S::zero(); h];
        let mut gb2 = S::zero();
        let mut loss = S::zero();
        for (x, &y) in xs.iter().zip(&ys) {
            clf.hidden_into(x, &mut hid);
            let p = sigmoid(clf.logit_from_hidden(&hid));
            loss = loss - (y * (p + eps).ln() + (S::one() - y) * (S::one() - p + eps).ln());
            let dz = (p - y) / nt;
            gb2 = gb2 + dz;
            for j in 0..h {
                gw2[j] = gw2[j] + dz * hid[j];
                if hid[j] > S::zero() {
                    let dh = dz * clf.w2[j];
                    gb1[j] = gb1[j] + dh;
                    for (i, xi) in x.iter().enumerate() {
                        gw1[i * h + j] = gw1[i * h + j] + dh * *xi;
                    }
                }
            }
        }
        trace.push(loss / nt);
        for (w, g) in clf.w1.iter_mut().zip(&gw1) {
            *w = *w - lr * *g;
        }
        for (w, g) in clf.b1.iter_mut().zip(&gb1) {
            *w = *w - lr * *g;
        }
        for (w, g) in clf.w2.iter_mut().zip(&gw2) {
            *w = *w - lr * *g;
        }
        clf.b2 = clf.b2 - lr * gb2;
    }

    // fold standardization: z = ((x - m) / s) W1 + b1
    for j in 0..h {
        let mut shift = S::zero();
        for i in 0..dim {
            let w = clf.w1[i * h + j] / std[i];
            clf.w1[i * h + j] = w;
            shift = shift + mean[i] * w;
        }
        clf.b1[j] = clf.b1[j] - shift;
    }

    let val_accuracy = if val_idx.is_empty() {
        f64::NAN
    } else {
        let correct = val_idx
            .iter()
            .filter(|&&i| (clf.score(&features[i]) > S::of(0.5)) == (labels[i] == 1))
            .count();
        correct as f64 / val_idx.len() as f64
    };

    Ok(TrainReport {
        classifier: clf,
        val_accuracy,
        loss_trace: trace,
        train_size: n_train,
        val_size: val_idx.len(),
    })
}

/// Splits records into `(kept, dropped)` by `score > threshold`, preserving
/// input order inside each partition.
pub fn filter_clips(
    records: Vec<ClipRecord>,
    clf: &MlpClassifier<f64>,
    threshold: f64,
) -> Result<(Vec<ClipRecord>, Vec<ClipRecord>), SelectError> {
    let keep: Vec<bool> = records
        .par_iter()
        .map(|r| {
            let f = r
                .feature
                .as_ref()
                .ok_or_else(|| SelectError::IncompleteRecord(r.clip_id.clone()))?;
            if f.len() != clf.input_dim {
                return Err(SelectError::Shape {
                    expected: clf.input_dim,
                    found: f.len(),
                    clip_id: r.clip_id.clone(),
                });
            }
            Ok(clf.score(f) > threshold)
        })
        .collect::<Result<_, _>>()?;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (r, k) in records.into_iter().zip(keep) {
        if k {
            kept.push(r);
        } else {
            dropped.push(r);
        }
    }
    Ok((kept, dropped))
}

/// Collects `(features, labels)` from labelled records.
pub fn labelled_features(records: &[ClipRecord]) -> Result<(Vec<Vec<f64>>, Vec<u8>), SelectError> {
    let mut xs = Vec::with_capacity(records.len());
    let mut ys = Vec::with_capacity(records.len());
    for r in records {
        let f = r
            .feature
            .clone()
            .ok_or_else(|| SelectError::IncompleteRecord(r.clip_id.clone()))?;
        if let Some(first) = xs.first().map(Vec::len) {
            if f.len() != first {
                return Err(SelectError::Shape {
                    expected: first,
                    found: f.len(),
                    clip_id: r.clip_id.clone(),
                });
            }
        }
        xs.push(f);
        ys.push(r.label.ok_or_else(|| SelectError::MissingLabel(r.clip_id.clone()))?);
    }
    Ok((xs, ys))
}
