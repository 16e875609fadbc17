use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{info_nce, info_nce_graph};
use super::optim::AdamW;
use super::{TrainConfig, TrainError};
use crate::model::{BnRecord, EgoVideo, Group, PathMask};
use crate::num::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// One clip-caption pair ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<S> {
    pub clip_id: String,
    /// `[T, 3, S, S]` low-rate frames.
    pub low: Tensor<S>,
    /// `[lambda * T, 3, S, S]` high-rate frames.
    pub high: Tensor<S>,
    pub tokens: Vec<u32>,
}

/// Pairs `i <-> i`; clip ids are unique.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, S> {
    items: &'a [&'a Example<S>],
}

impl<'a, S> Batch<'a, S> {
    pub fn new(items: &'a [&'a Example<S>]) -> Result<Self, TrainError> {
        if items.is_empty() {
            return Err(TrainError::Batch("empty batch".into()));
        }
        let mut seen = HashSet::new();
        for e in items {
            if !seen.insert(e.clip_id.as_str()) {
                return Err(TrainError::Batch(format!("clip {} appears twice", e.clip_id)));
            }
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepOutput {
    /// Optimised loss on the fused embedding (plus auxiliary terms if enabled).
    pub loss: f64,
    /// InfoNCE of the low-rate embedding alone, for monitoring.
    pub loss_low: f64,
    /// InfoNCE of the high-rate embedding alone, for monitoring.
    pub loss_high: f64,
}

#[derive(Debug, Clone)]
pub struct Gradients<S> {
    /// Per store entry; `None` for masked parameters and buffers.
    pub per_param: Vec<Option<Vec<S>>>,
    pub output: StepOutput,
    pub bn: Vec<BnRecord<S>>,
}

fn unit_rows<S: Scalar>(g: &Graph<S>, v: Var) -> Vec<f64> {
    let t = g.value(v);
    let d = t.shape()[1];
    t.data()
        .chunks(d)
        .flat_map(|r| {
            let n = r.iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>().sqrt().max(1e-12);
            r.iter().map(move |x| x.to_f64_lossy() / n)
        })
        .collect()
}

/// Forward both pathways on every pair, InfoNCE on the fused embedding,
/// and backward under `mask`.
pub fn compute_gradients<S: Scalar>(
    model: &EgoVideo<S>,
    batch: &Batch<'_, S>,
    cfg: &TrainConfig,
    mask: PathMask,
) -> Result<Gradients<S>, TrainError> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, mask);
    let mut bn = Vec::new();
    let (mut ev, mut evl, mut evh, mut et) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ex in batch.items {
        let e = model.encode_video(&mut g, &b, &ex.low, &ex.high, true, &mut bn)?;
        ev.push(e.e_v);
        evl.push(e.e_vl);
        evh.push(e.e_vh);
        et.push(model.encode_text(&mut g, &b, &ex.tokens)?);
    }
    let rows = |g: &mut Graph<S>, v: &[Var]| -> Result<Var, TrainError> {
        let m = g.concat(v, 0)?;
        Ok(g.l2_normalize(m, 1)?)
    };
    let ev = rows(&mut g, &ev)?;
    let evl = rows(&mut g, &evl)?;
    let evh = rows(&mut g, &evh)?;
    let et = rows(&mut g, &et)?;
    let mut loss = info_nce_graph(&mut g, ev, et, cfg.tau)?;
    if cfg.aux_loss {
        let l = info_nce_graph(&mut g, evl, et, cfg.tau)?;
        let h = info_nce_graph(&mut g, evh, et, cfg.tau)?;
        loss = g.add(loss, l)?;
        loss = g.add(loss, h)?;
    }
    let value = g.value(loss).item().to_f64_lossy();
    if !value.is_finite() {
        let op = g.first_non_finite().map_or("loss", |(_, op)| op);
        return Err(TrainError::Numerical(format!("non-finite loss, first produced by {op}")));
    }
    let (n, d) = (batch.len(), model.config().embed_dim);
    let t = unit_rows(&g, et);
    let output = StepOutput {
        loss: value,
        loss_low: info_nce(&unit_rows(&g, evl), &t, n, d, cfg.tau)?,
        loss_high: info_nce(&unit_rows(&g, evh), &t, n, d, cfg.tau)?,
    };
    if mask != PathMask::INFER {
        g.backward(loss)?;
    }
    let per_param = (0..model.store().len())
        .map(|i| {
            b.trainable_leaf(i).filter(|v| g.requires_grad(*v)).map(|v| {
                g.grad(v)
                    .map(<[S]>::to_vec)
                    .unwrap_or_else(|| vec![S::zero(); model.store().value(i).numel()])
            })
        })
        .collect();
    Ok(Gradients { per_param, output, bn })
}

/// Largest absolute gradient per group; masked groups report exactly 0.
pub fn group_max_abs<S: Scalar>(model: &EgoVideo<S>, grads: &Gradients<S>) -> BTreeMap<Group, f64> {
    let mut out = BTreeMap::new();
    for (e, gr) in model.store().entries().iter().zip(&grads.per_param) {
        let m = gr
            .as_ref()
            .map_or(0.0, |v| v.iter().fold(0.0f64, |a, x| a.max(x.to_f64_lossy().abs())));
        let slot = out.entry(e.group).or_insert(0.0f64);
        *slot = slot.max(m);
    }
    out
}

/// One co-training step: gradients under `mask`, one AdamW update over
/// every unmasked parameter, then running batch-norm statistics.
pub fn cotrain_step<S: Scalar>(
    model: &mut EgoVideo<S>,
    opt: &mut AdamW<S>,
    batch: &Batch<'_, S>,
    cfg: &TrainConfig,
    mask: PathMask,
) -> Result<StepOutput, TrainError> {
    let grads = compute_gradients(model, batch, cfg, mask)?;
    opt.begin_step();
    for (i, gr) in grads.per_param.iter().enumerate() {
        if let Some(gr) = gr {
            let theta = model.store_mut().value_mut(i).data_mut();
            opt.update(i, theta, gr)?;
            if theta.iter().any(|v| !v.is_finite()) {
                let name = &model.store().entry(i).name;
                return Err(TrainError::Numerical(format!("parameter {name} became non-finite")));
            }
        }
    }
    model.update_running_stats(&grads.bn);
    Ok(grads.output)
}

/// Epoch loop with a seeded shuffle per epoch. `on_step` sees the step
/// index and its output.
pub fn train<S: Scalar>(
    model: &mut EgoVideo<S>,
    data: &[Example<S>],
    cfg: &TrainConfig,
    mask: PathMask,
    mut on_step: impl FnMut(usize, &StepOutput),
) -> Result<Vec<StepOutput>, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Batch("no training pairs".into()));
    }
    let mut opt = AdamW::new(cfg.adamw(), model.store().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    'outer: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| history.len() >= m) {
                break 'outer;
            }
            let items: Vec<&Example<S>> = chunk.iter().map(|&i| &data[i]).collect();
            let batch = Batch::new(&items)?;
            let out = cotrain_step(model, &mut opt, &batch, cfg, mask)?;
            on_step(history.len(), &out);
            history.push(out);
        }
    }
    Ok(history)
}
