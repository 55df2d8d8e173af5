use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dart_cli::{manifest_path, run_with_output};
use serde_json::Value;
use tempfile::TempDir;

const SPEC: &str = r#"{"n_accents": 3, "speakers_per_accent": 2, "utterances_per_speaker": 4, "frames": 4, "feature_dim": 6}"#;
const CONFIG: &str = r#"{"feature_dim": 6, "hidden_dim": 16, "latent_dim": 3, "codebook_sizes": {"speaker": 8, "accent": 8}, "batch_size": 8}"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self { dir: tempfile::tempdir().unwrap() };
        fs::write(ws.path("spec.json"), SPEC).unwrap();
        fs::write(ws.path("cfg.json"), CONFIG).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    /// Runs `dart <args>` in-process and returns (exit code, stdout).
    fn run(&self, args: &[&str]) -> (i32, String) {
        let mut out = Vec::new();
        let code = run_with_output(std::iter::once("dart").chain(args.iter().copied()), &mut out);
        (code, String::from_utf8(out).unwrap())
    }

    fn ok(&self, args: &[&str]) -> String {
        let (code, out) = self.run(args);
        assert_eq!(code, 0, "dart {args:?}");
        out
    }

    fn json(&self, args: &[&str]) -> Value {
        let out = self.ok(args);
        assert_eq!(out.lines().count(), 1, "{out}");
        serde_json::from_str(&out).unwrap()
    }

    fn pipeline(&self) {
        self.ok(&["synth-data", "--spec", &self.arg("spec.json"), "--out", &self.arg("data.jsonl")]);
        self.ok(&[
            "train", "--config", &self.arg("cfg.json"), "--data", &self.arg("data.jsonl"),
            "--out", &self.arg("model.ckpt"), "--steps", "30",
        ]);
        self.ok(&["embed", "--model", &self.arg("model.ckpt"), "--data", &self.arg("data.jsonl"), "--out", &self.arg("emb.csv")]);
        self.ok(&[
            "plot", "--embeddings", &self.arg("emb.csv"), "--color-by", "accent", "--branch", "accent",
            "--out", &self.arg("fig.svg"),
        ]);
    }
}

fn manifest(primary: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(manifest_path(primary)).unwrap()).unwrap()
}

#[test]
fn default_synthesis_writes_240_utterances_and_a_manifest() {
    let ws = Workspace::new();
    ws.ok(&["synth-data", "--out", &ws.arg("data.jsonl")]);
    let text = fs::read_to_string(ws.path("data.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 240);
    let m = manifest(&ws.path("data.jsonl"));
    assert_eq!(m["seed"], 42);
    assert_eq!(m["config"]["n_accents"], 6);
    assert_eq!(m["outputs"][0], ws.arg("data.jsonl"));
    assert!(m["started_at"].as_str().unwrap() <= m["finished_at"].as_str().unwrap());
}

#[test]
fn pipeline_outputs_and_manifests() {
    let ws = Workspace::new();
    ws.pipeline();
    let history = fs::read_to_string(ws.path("model.ckpt.loss.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("step,learning_rate,recon,kl,commitment,codebook,beta,total"));
    assert_eq!(lines.count(), 30);

    let m = manifest(&ws.path("model.ckpt"));
    assert_eq!(m["config"]["total_steps"], 30);
    assert!(m["final_loss"]["total"].is_number());
    for out in m["outputs"].as_array().unwrap() {
        assert!(Path::new(out.as_str().unwrap()).exists());
    }

    let csv = fs::read_to_string(ws.path("emb.csv")).unwrap();
    assert!(csv.starts_with("utterance_id,speaker_id,accent_id,branch,kind,v0,v1,v2\n"));
    assert_eq!(csv.lines().count(), 1 + 24 * 6);

    let svg = fs::read_to_string(ws.path("fig.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 24);
    for p in ["emb.csv", "fig.svg"] {
        assert!(manifest_path(&ws.path(p)).exists());
    }
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = Workspace::new();
    let b = Workspace::new();
    a.pipeline();
    b.pipeline();
    for f in ["data.jsonl", "model.ckpt", "model.ckpt.loss.csv", "emb.csv", "fig.svg"] {
        assert_eq!(fs::read(a.path(f)).unwrap(), fs::read(b.path(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_changes_outputs() {
    let ws = Workspace::new();
    ws.ok(&["synth-data", "--spec", &ws.arg("spec.json"), "--out", &ws.arg("a.jsonl")]);
    ws.ok(&["--seed", "7", "synth-data", "--spec", &ws.arg("spec.json"), "--out", &ws.arg("b.jsonl")]);
    assert_ne!(fs::read(ws.path("a.jsonl")).unwrap(), fs::read(ws.path("b.jsonl")).unwrap());
}

#[test]
fn seed_environment_variable_matches_flag() {
    let ws = Workspace::new();
    let bin = env!("CARGO_BIN_EXE_dart");
    let status = Command::new(bin)
        .args(["synth-data", "--spec", &ws.arg("spec.json"), "--out", &ws.arg("env.jsonl")])
        .env("DART_SEED", "9")
        .status()
        .unwrap();
    assert!(status.success());
    let status = Command::new(bin)
        .args(["--seed", "9", "synth-data", "--spec", &ws.arg("spec.json"), "--out", &ws.arg("flag.jsonl")])
        .env_remove("DART_SEED")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(fs::read(ws.path("env.jsonl")).unwrap(), fs::read(ws.path("flag.jsonl")).unwrap());
}

#[test]
fn self_conversion_reproduces_reconstruction() {
    let ws = Workspace::new();
    ws.pipeline();
    let data = dart_core::data::load_dataset(&ws.path("data.jsonl")).unwrap();
    let model = dart_core::model::load_checkpoint(&ws.path("model.ckpt")).unwrap();
    let recon = dart_core::model::reconstruct(&model, &data).unwrap();
    let (i, utt) = data.utterances.iter().enumerate().nth(5).unwrap();
    ws.ok(&[
        "convert", "--model", &ws.arg("model.ckpt"), "--data", &ws.arg("data.jsonl"),
        "--utterance", &utt.utterance_id, "--target-accent", &utt.accent_id, "--out", &ws.arg("conv.jsonl"),
    ]);
    let conv = dart_core::data::load_dataset(&ws.path("conv.jsonl")).unwrap();
    assert_eq!(conv.len(), 1);
    assert_eq!(conv.utterances[0].features, recon[i]);

    let other = data.utterances.iter().find(|u| u.accent_id != utt.accent_id).unwrap();
    ws.ok(&[
        "convert", "--model", &ws.arg("model.ckpt"), "--data", &ws.arg("data.jsonl"),
        "--utterance", &utt.utterance_id, "--target-accent", &other.accent_id, "--out", &ws.arg("x.jsonl"),
    ]);
    let x = dart_core::data::load_dataset(&ws.path("x.jsonl")).unwrap();
    assert_eq!(x.utterances[0].accent_id, other.accent_id);
    assert_eq!(x.utterances[0].frames(), utt.frames());

    let (code, _) = ws.run(&[
        "convert", "--model", &ws.arg("model.ckpt"), "--data", &ws.arg("data.jsonl"),
        "--utterance", &utt.utterance_id, "--target-accent", "nowhere", "--out", &ws.arg("y.jsonl"),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn eval_wer_on_identical_transcripts() {
    let ws = Workspace::new();
    fs::write(ws.path("ref.txt"), "the cat sat\non the mat\n").unwrap();
    let v = ws.json(&["eval", "--task", "wer", "--ref", &ws.arg("ref.txt"), "--hyp", &ws.arg("ref.txt")]);
    assert_eq!(v["wer"], 0.0);
    assert_eq!(v["reference_tokens"], 6);

    fs::write(ws.path("hyp.txt"), "the dog sat\non mat\n").unwrap();
    let v = ws.json(&["eval", "--task", "wer", "--ref", &ws.arg("ref.txt"), "--hyp", &ws.arg("hyp.txt")]);
    assert_eq!(v["wer"], 2.0 / 6.0);
    assert_eq!((v["substitutions"].as_u64(), v["deletions"].as_u64()), (Some(1), Some(1)));
}

#[test]
fn eval_listening_tasks() {
    let ws = Workspace::new();
    fs::write(ws.path("two.txt"), "3\n5\n").unwrap();
    let v = ws.json(&["eval", "--task", "mos", "--ratings", &ws.arg("two.txt")]);
    assert_eq!(v["mos"], 4.0);
    assert!((v["ci95"].as_f64().unwrap() - 12.7062).abs() < 1e-3);

    fs::write(
        ws.path("trials.jsonl"),
        "{\"shown\":[\"A\",\"B\"],\"best\":\"A\",\"worst\":\"B\"}\n{\"shown\":[\"A\",\"B\"],\"best\":\"A\",\"worst\":\"B\"}\n",
    )
    .unwrap();
    let v = ws.json(&["eval", "--task", "bws", "--trials", &ws.arg("trials.jsonl")]);
    assert_eq!(v["scores"]["A"], 1.0);
    assert_eq!(v["scores"]["B"], -1.0);
    assert_eq!(v["best_share"]["A"], 1.0);
    assert_eq!(v["trials"], 2);
}

#[test]
fn eval_signal_tasks() {
    let ws = Workspace::new();
    ws.pipeline();
    let v = ws.json(&["eval", "--task", "mcd", "--ref", &ws.arg("data.jsonl"), "--syn", &ws.arg("data.jsonl")]);
    assert_eq!(v["mcd"], 0.0);
    assert_eq!(v["pairs"], 24);

    let v = ws.json(&["eval", "--task", "cs", "--ref", &ws.arg("emb.csv"), "--syn", &ws.arg("emb.csv")]);
    assert!((v["cs"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    fs::write(ws.path("ref_f0.csv"), "frame_index,f0_hz\n0,100\n1,100\n").unwrap();
    fs::write(ws.path("syn_f0.csv"), "frame_index,f0_hz\n0,130\n1,110\n").unwrap();
    let v = ws.json(&["eval", "--task", "ffe", "--ref", &ws.arg("ref_f0.csv"), "--syn", &ws.arg("syn_f0.csv")]);
    assert_eq!(v["ffe"], 0.5);
}

#[test]
fn sweep_rows_do_not_depend_on_jobs() {
    let ws = Workspace::new();
    ws.ok(&["synth-data", "--spec", &ws.arg("spec.json"), "--out", &ws.arg("data.jsonl")]);
    let sweep = |jobs: &str, out: &str| {
        ws.ok(&[
            "sweep", "--config", &ws.arg("cfg.json"), "--codebook-sizes", "4,8", "--data", &ws.arg("data.jsonl"),
            "--out", &ws.arg(out), "--steps", "20", "--jobs", jobs,
        ]);
        fs::read_to_string(ws.path(out)).unwrap()
    };
    let serial = sweep("1", "s1.csv");
    assert_eq!(serial, sweep("2", "s2.csv"));
    let rows: Vec<&str> = serial.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("codebook_size,seed,recon,kl,"));
    assert!(rows[1].starts_with("4,46,") && rows[2].starts_with("8,50,"));
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&["frobnicate"]).0, 1);
    assert_eq!(ws.run(&["train", "--data"]).0, 1);
    assert_eq!(ws.run(&["eval", "--task", "wer", "--ref", &ws.arg("spec.json")]).0, 1);
    assert_eq!(ws.run(&["--help"]).0, 0);
    assert_eq!(ws.run(&["embed", "--model", &ws.arg("missing"), "--data", &ws.arg("x"), "--out", &ws.arg("y")]).0, 2);

    fs::write(ws.path("one.txt"), "4\n").unwrap();
    assert_eq!(ws.run(&["eval", "--task", "mos", "--ratings", &ws.arg("one.txt")]).0, 2);

    ws.ok(&["synth-data", "--spec", &ws.arg("spec.json"), "--out", &ws.arg("data.jsonl")]);
    let text = fs::read_to_string(ws.path("data.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut first: Value = serde_json::from_str(&lines[0]).unwrap();
    for row in first["features"].as_array_mut().unwrap() {
        for v in row.as_array_mut().unwrap() {
            *v = Value::from(1e200);
        }
    }
    lines[0] = first.to_string();
    fs::write(ws.path("huge.jsonl"), lines.join("\n") + "\n").unwrap();
    let cfg = r#"{"feature_dim": 6, "hidden_dim": 16, "latent_dim": 3, "codebook_sizes": {"speaker": 8, "accent": 8}, "batch_size": 24}"#;
    fs::write(ws.path("big_batch.json"), cfg).unwrap();
    let (code, _) = ws.run(&[
        "train", "--config", &ws.arg("big_batch.json"), "--data", &ws.arg("huge.jsonl"),
        "--out", &ws.arg("m.ckpt"), "--steps", "5",
    ]);
    assert_eq!(code, 3);
    assert!(!ws.path("m.ckpt").exists());
}
