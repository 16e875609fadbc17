use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hod"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const DESK: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");

fn synth(dir: &Path, clips: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("synth_{clips}_{seed}"));
    let o = hod(&["synth", "--out-dir", s(&out), "--clips", &clips.to_string(), "--seed", &seed.to_string()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

/// The desk config with fewer steps so the test stays quick.
fn short_config(dir: &Path, steps: usize) -> PathBuf {
    let text = fs::read_to_string(DESK)
        .unwrap()
        .replace("max_steps = 500", &format!("max_steps = {steps}"));
    let p = dir.join(format!("short_{steps}.toml"));
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&hod(&["--help"])), 0);
    assert_eq!(code(&hod(&["--version"])), 0);
    assert_eq!(code(&hod(&["frobnicate"])), 1);
    assert_eq!(code(&hod(&["synth"])), 1);
    assert_eq!(
        code(&hod(&["gen", "--detections", "a", "--narrations", "b", "--out", "c", "--llm-endpoint", "http://x"])),
        1,
        "endpoint without model"
    );
}

#[test]
fn missing_input_is_a_data_error() {
    let d = tempfile::tempdir().unwrap();
    let o = hod(&[
        "gen",
        "--detections",
        s(&d.path().join("nope.jsonl")),
        "--narrations",
        s(&d.path().join("nope2.jsonl")),
        "--out",
        s(&d.path().join("out.jsonl")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!d.path().join("out.jsonl").exists());
}

#[test]
fn malformed_line_reports_its_number() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), 3, 0);
    let det = fs::read_to_string(data.join("detections.jsonl")).unwrap();
    let mut lines: Vec<&str> = det.lines().collect();
    lines[1] = "{not json";
    let bad = d.path().join("bad.jsonl");
    fs::write(&bad, lines.join("\n")).unwrap();
    let o = hod(&[
        "gen",
        "--pixels",
        "--detections",
        s(&bad),
        "--narrations",
        s(&data.join("pairs.jsonl")),
        "--out",
        s(&d.path().join("e.jsonl")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn pixel_boxes_need_the_pixels_flag() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), 2, 0);
    let out = d.path().join("e.jsonl");
    let o = hod(&[
        "gen",
        "--detections",
        s(&data.join("detections.jsonl")),
        "--narrations",
        s(&data.join("pairs.jsonl")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("synth_"));
    assert!(!out.exists());
}

#[test]
fn config_errors_are_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    let unknown = d.path().join("u.toml");
    fs::write(&unknown, "[model]\nbogus = 1\n").unwrap();
    assert_eq!(code(&hod(&["model", "params", "--config", s(&unknown)])), 1);
    let heads = d.path().join("h.toml");
    fs::write(&heads, "[model]\nembed_dim = 30\nheads = 4\n").unwrap();
    assert_eq!(code(&hod(&["model", "params", "--config", s(&heads)])), 1);
}

#[test]
fn synth_is_seeded() {
    let d = tempfile::tempdir().unwrap();
    let a = synth(d.path(), 6, 4);
    let b = d.path().join("again");
    assert_eq!(code(&hod(&["synth", "--out-dir", s(&b), "--clips", "6", "--seed", "4"])), 0);
    let c = synth(d.path(), 6, 5);
    for f in ["detections.jsonl", "pairs.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("pairs.jsonl")).unwrap(), fs::read(c.join("pairs.jsonl")).unwrap());
}

#[test]
fn gen_is_deterministic_and_grounded() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), 8, 1);
    let run = |name: &str| {
        let out = d.path().join(name);
        let o = hod(&[
            "gen",
            "--pixels",
            "--detections",
            s(&data.join("detections.jsonl")),
            "--narrations",
            s(&data.join("pairs.jsonl")),
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    let first = run("a.jsonl");
    assert_eq!(first, run("b.jsonl"));

    let pairs: Vec<Value> = fs::read_to_string(data.join("pairs.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let enriched: Vec<Value> = String::from_utf8(first)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(pairs.len(), enriched.len());
    for (p, e) in pairs.iter().zip(&enriched) {
        assert_eq!(p["clip_id"], e["clip_id"]);
        let dir = p["caption"].as_str().unwrap().rsplit(' ').next().unwrap();
        let text = e["enriched"].as_str().unwrap();
        assert!(text.contains(&format!("hand moves {dir}")), "{text} vs {dir}");
        assert_eq!(e["provenance"]["kind"], "offline_template");
    }
}

#[test]
fn unreachable_llm_is_a_transport_error_unless_falling_back() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), 1, 0);
    let args = |out: &Path| {
        vec![
            "gen".to_string(),
            "--pixels".into(),
            "--detections".into(),
            s(&data.join("detections.jsonl")).into(),
            "--narrations".into(),
            s(&data.join("pairs.jsonl")).into(),
            "--out".into(),
            s(out).into(),
            "--llm-endpoint".into(),
            "http://127.0.0.1:9/v1/chat/completions".into(),
            "--llm-model".into(),
            "m".into(),
        ]
    };
    let strict = d.path().join("strict.jsonl");
    let a = args(&strict);
    let o = hod(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 3);
    assert!(!strict.exists());

    let lenient = d.path().join("lenient.jsonl");
    let mut a = args(&lenient);
    a.push("--offline-fallback".into());
    let o = hod(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(lenient).unwrap().lines().count(), 1);
}

#[test]
fn stats_writes_frequency_csv() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), 8, 2);
    let csv = d.path().join("stats.csv");
    let o = hod(&["stats", "--narrations", s(&data.join("pairs.jsonl")), "--top-k", "3", "--out", s(&csv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "token,frequency");
    assert_eq!(lines.len(), 4);
    let f: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(f.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn filter_train_then_apply() {
    let d = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    for i in 0..80 {
        let y = i % 2;
        let c = if y == 1 { 2.0 } else { -2.0 };
        let jitter = (i as f64 * 0.37).sin() * 0.5;
        lines.push(
            serde_json::json!({
                "clip_id": format!("c{i}"),
                "source": if y == 1 { "ego4d" } else { "how2" },
                "narration": "x",
                "feature": [c + jitter, c - jitter],
                "label": y,
            })
            .to_string(),
        );
    }
    let data = d.path().join("clips.jsonl");
    fs::write(&data, lines.join("\n") + "\n").unwrap();
    let clf = d.path().join("clf.bin");
    let o = hod(&["filter", "train", "--data", s(&data), "--out", s(&clf), "--epochs", "300"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["val_accuracy"].as_f64().unwrap() >= 0.95);

    let kept = d.path().join("kept.jsonl");
    let o = hod(&["filter", "apply", "--data", s(&data), "--clf", s(&clf), "--out", s(&kept)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let kept = fs::read_to_string(kept).unwrap();
    assert_eq!(kept.lines().count(), 40);
    assert!(kept.lines().all(|l| l.contains("\"ego4d\"")));

    fs::write(&clf, b"garbage").unwrap();
    let o = hod(&["filter", "apply", "--data", s(&data), "--clf", s(&clf), "--out", s(&d.path().join("k2"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn params_reports_counts() {
    let o = hod(&["model", "params", "--config", DESK]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["instantiated_matches_formula"], true);
    // Buffers are state, not parameters.
    let parts = ["visual_backbone", "adapters", "fusion", "text"];
    let sum: u64 = parts.iter().map(|k| v[k].as_u64().unwrap()).sum();
    assert_eq!(sum, v["total"].as_u64().unwrap());
    assert_eq!(
        v["adapter_total"].as_u64().unwrap(),
        v["adapters"].as_u64().unwrap() + v["fusion"].as_u64().unwrap()
    );
}

#[test]
fn gradcheck_passes_on_desk_config() {
    let d = tempfile::tempdir().unwrap();
    let report = d.path().join("g.json");
    let o = hod(&["model", "gradcheck", "--config", DESK, "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
    assert!(v["max_rel_err"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn divergent_training_is_a_numerical_error() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), 4, 0);
    let cfg = d.path().join("hot.toml");
    let text = fs::read_to_string(short_config(d.path(), 5)).unwrap().replace("lr = 2e-3", "lr = 1e30");
    fs::write(&cfg, text).unwrap();
    let out = d.path().join("ckpt");
    let o = hod(&["model", "train", "--config", s(&cfg), "--data", s(&data.join("pairs.jsonl")), "--out", s(&out)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("params.bin").exists());
}

#[test]
fn train_needs_data_and_out() {
    let o = hod(&["model", "train", "--config", DESK]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_eval_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), 8, 3);
    let pairs = data.join("pairs.jsonl");
    let cfg = short_config(d.path(), 40);
    let train = |out: &Path| {
        let o = hod(&["model", "train", "--config", s(&cfg), "--data", s(&pairs), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice::<Value>(&o.stdout).unwrap()
    };
    let a = d.path().join("a");
    let summary = train(&a);
    assert_eq!(summary["steps"], 40);
    assert!(summary["loss"].as_f64().unwrap() < summary["initial_loss"].as_f64().unwrap());
    for f in ["manifest.json", "params.bin", "tokenizer.json", "history.jsonl", "run.toml"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("history.jsonl")).unwrap().lines().count(), 40);

    let b = d.path().join("b");
    train(&b);
    for f in ["manifest.json", "params.bin", "tokenizer.json", "history.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }

    for (task, key) in [("retrieval", "recall_at_1_video_to_text"), ("mcq", "accuracy"), ("cls", "accuracy")] {
        let report = d.path().join(format!("{task}.json"));
        let o = hod(&[
            "model",
            "eval",
            "--task",
            task,
            "--ckpt",
            s(&a),
            "--data",
            s(&pairs),
            "--report",
            s(&report),
        ]);
        assert_eq!(code(&o), 0, "{task}: {}", String::from_utf8_lossy(&o.stderr));
        let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(v["task"], task);
        assert_eq!(v["pairs"], 8);
        let m = v["metrics"][key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&m), "{task} {m}");
    }

    fs::write(a.join("params.bin"), b"short").unwrap();
    let o = hod(&[
        "model",
        "eval",
        "--task",
        "retrieval",
        "--ckpt",
        s(&a),
        "--data",
        s(&pairs),
        "--report",
        s(&d.path().join("r.json")),
    ]);
    assert_eq!(code(&o), 2);
}
