//! Data-side commands: narration enrichment, word statistics, the style
//! classifier and synthetic data.

use std::collections::HashMap;
use std::path::Path;

use hod_core::detection::{ClipDetections, DetectionError};
use hod_core::io::{self, atomic_write, read_bytes, read_jsonl, read_text, synth_data, write_jsonl, IoError, SynthConfig};
use hod_core::narrate::{LlmClient, LlmConfig};
use hod_core::narrate::rephrase_offline_with;
use hod_core::narrate::render_prompt;
use hod_core::narrate::{word_frequency, NarrationRecord};
use hod_core::select::{filter_clips, labelled_features, train_classifier, ClassifierConfig, ClipRecord, MlpClassifier};
use hod_core::trajectory::build_bundle;
use hod_core::Error;
use serde_json::{json, Value};

use crate::{FilterApplyArgs, FilterTrainArgs, GenArgs, StatsArgs, SynthArgs};

fn read_detections(path: &Path, pixels: bool) -> Result<Vec<ClipDetections>, Error> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match ClipDetections::from_json_line(line, pixels) {
            Ok(d) => out.push(d),
            Err(DetectionError::Json(e)) => {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                }
                .into())
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

#[derive(serde::Deserialize)]
struct NarrationIn {
    clip_id: String,
    narration: String,
}

pub fn gen(a: &GenArgs, seed: u64) -> Result<(), Error> {
    let detections = read_detections(&a.detections, a.pixels)?;
    let mut narrations = HashMap::new();
    for n in read_jsonl::<NarrationIn>(&a.narrations)? {
        if narrations.insert(n.clip_id.clone(), n.narration).is_some() {
            return Err(IoError::Data(format!("clip {} has two narrations", n.clip_id)).into());
        }
    }
    let bundles = detections
        .iter()
        .map(|d| {
            let n = narrations
                .get(&d.clip_id)
                .ok_or_else(|| IoError::Data(format!("clip {} has no narration", d.clip_id)))?;
            Ok(build_bundle(d, n, a.giou_threshold))
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let records: Vec<NarrationRecord> = match (&a.llm_endpoint, &a.llm_model) {
        (Some(endpoint), Some(model)) => {
            let mut cfg = LlmConfig::new(endpoint.clone(), model.clone());
            cfg.seed = seed;
            let client = LlmClient::new(cfg)?;
            let payloads = bundles.iter().map(render_prompt).collect::<Result<Vec<_>, _>>()?;
            let results = client.rephrase_all(&payloads);
            let mut out = Vec::with_capacity(results.len());
            for (r, b) in results.into_iter().zip(&bundles) {
                match r {
                    Ok(rec) => out.push(rec),
                    Err(e) if a.offline_fallback => {
                        log::warn!("clip {}: {e}; using the offline template", b.clip_id);
                        out.push(rephrase_offline_with(b, a.motion_eps, seed));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            out
        }
        _ => bundles.iter().map(|b| rephrase_offline_with(b, a.motion_eps, seed)).collect(),
    };
    write_jsonl(&a.out, &records)?;
    log::info!("wrote {} narrations to {}", records.len(), a.out.display());
    Ok(())
}

pub fn stats(a: &StatsArgs) -> Result<(), Error> {
    let rows: Vec<Value> = read_jsonl(&a.narrations)?;
    let mut corpus = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let text = r
            .get("enriched")
            .or_else(|| r.get("narration"))
            .and_then(Value::as_str)
            .ok_or_else(|| IoError::Parse {
                path: a.narrations.clone(),
                line: i + 1,
                message: "record has neither `enriched` nor `narration` text".into(),
            })?;
        corpus.push(text.to_string());
    }
    let table = word_frequency(&corpus, a.top_k)?;
    atomic_write(&a.out, table.to_csv().as_bytes())?;
    Ok(())
}

pub fn filter_train(a: &FilterTrainArgs, seed: u64) -> Result<(), Error> {
    let records: Vec<ClipRecord> = read_jsonl(&a.data)?;
    let (x, y) = labelled_features(&records)?;
    let cfg = ClassifierConfig {
        hidden: a.hidden,
        lr: a.lr,
        epochs: a.epochs,
        val_fraction: a.val_fraction,
        seed,
    };
    let report = train_classifier(&x, &y, &cfg)?;
    let clf = &report.classifier;
    atomic_write(&a.out, &clf.to_bytes())?;
    println!(
        "{}",
        json!({
            "val_accuracy": report.val_accuracy,
            "train_size": report.train_size,
            "val_size": report.val_size,
            "final_loss": report.loss_trace.last(),
            "parameters": clf.parameter_count(),
        })
    );
    Ok(())
}

pub fn filter_apply(a: &FilterApplyArgs) -> Result<(), Error> {
    let clf = MlpClassifier::<f64>::from_bytes(&read_bytes(&a.clf)?)?;
    let records: Vec<ClipRecord> = read_jsonl(&a.data)?;
    let total = records.len();
    let (kept, _) = filter_clips(records, &clf, a.threshold)?;
    write_jsonl(&a.out, &kept)?;
    log::info!("kept {} of {total} clips", kept.len());
    Ok(())
}

pub fn synth(a: &SynthArgs, seed: u64) -> Result<(), Error> {
    if a.clips == 0 {
        return Err(Error::Usage("--clips must be at least 1".into()));
    }
    if a.size < 4 {
        return Err(Error::Usage("--size must be at least 4".into()));
    }
    let d = synth_data(seed, a.clips, &SynthConfig { size: a.size, ..Default::default() });
    let lines: Vec<String> = d.detections.iter().map(ClipDetections::to_json_line).collect();
    atomic_write(&a.out_dir.join("detections.jsonl"), (lines.join("\n") + "\n").as_bytes())?;
    atomic_write(&a.out_dir.join("pairs.jsonl"), io::to_jsonl(&d.pairs).as_bytes())?;
    Ok(())
}
