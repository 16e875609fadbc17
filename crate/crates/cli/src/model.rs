//! `hod model ...`: training, evaluation, gradient checks and parameter counts.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use hod_core::io::checkpoint::read_manifest;
use hod_core::io::{
    atomic_write, load_checkpoint, pair_text, IoError, pairs_to_examples, read_jsonl, save_checkpoint, to_jsonl, PairRecord,
    RunConfig, TextField,
};
use hod_core::model::bpe::BpeTokenizer;
use hod_core::model::{count_params, instantiate_adapters, EgoVideo, Group, ModelConfig, PathMask};
use hod_core::tensor::GradcheckConfig;
use hod_core::train::{self, embed_texts, embed_videos, evaluate, gradcheck_model, zeroshot_classify, Precision, TrainError};
use hod_core::{Error, Scalar};
use serde_json::{json, Value};

use crate::{ConfigArgs, ModelEvalArgs, ModelTrainArgs, Task};

/// Above this many parameters `model params` checks only the adapters
/// against a real instantiation.
const FULL_INSTANTIATION_LIMIT: usize = 5_000_000;
const GRADCHECK_COORDS: usize = 2_000;

fn pick(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, Error> {
    flag.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| Error::Usage(format!("no {what} path: pass --{what} or set paths.{what} in the config")))
}

fn write_report(path: Option<&Path>, v: &Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(v).expect("report serializes") + "\n";
    if let Some(p) = path {
        atomic_write(p, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

pub fn train(a: &ModelTrainArgs, seed: Option<u64>) -> Result<(), Error> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let data = pick(&a.data, &cfg.paths.data, "data")?;
    let out = pick(&a.out, &cfg.paths.out, "out")?;
    let pairs: Vec<PairRecord> = read_jsonl(&data)?;
    match cfg.train.precision {
        Precision::F32 => run_train::<f32>(&cfg, &pairs, &out, a.log_every),
        Precision::F64 => run_train::<f64>(&cfg, &pairs, &out, a.log_every),
    }
}

fn run_train<S: Scalar>(cfg: &RunConfig, pairs: &[PairRecord], out: &Path, log_every: usize) -> Result<(), Error> {
    let texts: Vec<&str> = pairs.iter().map(|p| pair_text(p, cfg.data.text_field)).collect();
    let tokenizer = BpeTokenizer::train(&texts, cfg.data.bpe_merges)?;
    let examples = pairs_to_examples::<S>(pairs, &tokenizer, &cfg.model, cfg.data.text_field)?;
    let mut model = EgoVideo::<S>::new(cfg.model.clone(), cfg.train.seed)?;
    let history = train::train(&mut model, &examples, &cfg.train, PathMask::COTRAIN, |i, o| {
        if log_every > 0 && i % log_every == 0 {
            log::info!("step {i}: loss {:.5} (low {:.5}, high {:.5})", o.loss, o.loss_low, o.loss_high);
        }
    })?;
    save_checkpoint(&model, Some(&tokenizer), out)?;
    atomic_write(&out.join("history.jsonl"), to_jsonl(&history).as_bytes())?;
    atomic_write(&out.join("run.toml"), cfg.to_toml().as_bytes())?;
    let last = history.last().expect("at least one step");
    write_report(
        None,
        &json!({
            "steps": history.len(),
            "loss": last.loss,
            "loss_low": last.loss_low,
            "loss_high": last.loss_high,
            "initial_loss": history[0].loss,
            "checkpoint": out,
        }),
    )
}

pub fn eval(a: &ModelEvalArgs) -> Result<(), Error> {
    let dtype = read_manifest(&a.ckpt)?.dtype;
    let pairs: Vec<PairRecord> = read_jsonl(&a.data)?;
    let metrics = if dtype == f64::DTYPE {
        run_eval::<f64>(a, &pairs)?
    } else {
        run_eval::<f32>(a, &pairs)?
    };
    let task = match a.task {
        Task::Retrieval => "retrieval",
        Task::Mcq => "mcq",
        Task::Cls => "cls",
    };
    write_report(
        Some(&a.report),
        &json!({
            "task": task,
            "checkpoint": a.ckpt,
            "data": a.data,
            "pairs": pairs.len(),
            "metrics": metrics,
        }),
    )
}

fn run_eval<S: Scalar>(a: &ModelEvalArgs, pairs: &[PairRecord]) -> Result<Value, Error> {
    let (model, tokenizer) = load_checkpoint::<S>(&a.ckpt)?;
    let tokenizer = tokenizer.ok_or_else(|| IoError::Data(format!("{} has no tokenizer.json", a.ckpt.display())))?;
    let examples = pairs_to_examples::<S>(pairs, &tokenizer, model.config(), TextField::Caption)?;
    match a.task {
        Task::Retrieval => {
            let s = evaluate(&model, &examples)?;
            Ok(json!({
                "recall_at_1_video_to_text": s.recall_at_1_video_to_text,
                "recall_at_1_text_to_video": s.recall_at_1_text_to_video,
                "map": s.map,
                "ndcg": s.ndcg,
            }))
        }
        Task::Mcq => {
            let s = evaluate(&model, &examples)?;
            let acc = s
                .mcq_accuracy
                .ok_or_else(|| TrainError::Data("multiple choice needs at least 5 distinct captions".into()))?;
            Ok(json!({ "accuracy": acc, "groups": examples.len() }))
        }
        Task::Cls => {
            let classes: Vec<&str> = pairs
                .iter()
                .map(|p| p.caption.as_str())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let class_ids: Vec<Vec<u32>> = classes
                .iter()
                .map(|c| tokenizer.encode_for_model(c, model.config().max_text_len))
                .collect();
            let class_emb = embed_texts(&model, &class_ids)?;
            let videos = embed_videos(&model, &examples)?;
            let mut correct = 0;
            for (v, p) in videos.iter().zip(pairs) {
                let k = zeroshot_classify(v, &class_emb)?;
                if classes[k] == p.caption {
                    correct += 1;
                }
            }
            Ok(json!({
                "accuracy": correct as f64 / pairs.len().max(1) as f64,
                "classes": classes.len(),
            }))
        }
    }
}

pub fn gradcheck(a: &ConfigArgs, seed: Option<u64>) -> Result<(), Error> {
    let cfg = RunConfig::load(&a.config)?;
    let check = GradcheckConfig {
        max_coords: GRADCHECK_COORDS,
        seed: seed.unwrap_or(cfg.train.seed),
        ..Default::default()
    };
    let r = gradcheck_model(&cfg.model, cfg.train.tau, check.seed, &check)?;
    write_report(a.report.as_deref(), &serde_json::to_value(&r).expect("report serializes"))?;
    if !r.pass {
        return Err(TrainError::Numerical(format!(
            "gradient check failed: max relative error {:.3e} > {:.0e}",
            r.max_rel_err, r.tol
        ))
        .into());
    }
    Ok(())
}

fn instantiated(cfg: &ModelConfig) -> Result<(Value, bool), Error> {
    let counts = count_params(cfg);
    if counts.total() <= FULL_INSTANTIATION_LIMIT {
        let m = EgoVideo::<f32>::new(cfg.clone(), 0)?;
        let held = m.instantiated_counts();
        Ok((json!("full"), held == counts))
    } else {
        let store = instantiate_adapters::<f32>(cfg, 0)?;
        let by = store.count_by_group();
        let held = by.get(&Group::Adapter).copied().unwrap_or(0) + by.get(&Group::Fusion).copied().unwrap_or(0);
        Ok((json!("adapters"), held == counts.adapter_total()))
    }
}

pub fn params(a: &ConfigArgs) -> Result<(), Error> {
    let cfg = RunConfig::load(&a.config)?;
    let c = count_params(&cfg.model);
    let (checked, matches) = instantiated(&cfg.model)?;
    write_report(
        a.report.as_deref(),
        &json!({
            "visual_backbone": c.visual_backbone,
            "adapters": c.adapters,
            "fusion": c.fusion,
            "text": c.text,
            "buffers": c.buffers,
            "adapter_total": c.adapter_total(),
            "total": c.total(),
            "instantiated": checked,
            "instantiated_matches_formula": matches,
        }),
    )?;
    if !matches {
        return Err(TrainError::Data("instantiated parameter count differs from the formula".into()).into());
    }
    Ok(())
}
