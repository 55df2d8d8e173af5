use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::Utc;
use dart_core::data::{load_dataset, save_dataset, synth_dataset};
use dart_core::embedding::{read_embeddings_csv, write_embeddings_csv};
use dart_core::metrics::{
    bws_tally, centroid_accuracy, ffe, mcd, mean_cosine_similarity, mos_summary, pca2, read_bws_trials,
    read_ratings, wer, F0Track,
};
use dart_core::model::{
    extract_embeddings, load_checkpoint, save_checkpoint, train, train_from, Converter, StepRecord,
};
use dart_core::{Branch, Dataset, EmbeddingKind, EmbeddingRecord, LabelKind, ModelConfig, SynthSpec, Utterance};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, CliResult, WithPath};
use crate::manifest::RunManifest;
use crate::svg::write_scatter_svg;
use crate::{Cli, Command, ConvertArgs, EmbedArgs, EvalArgs, EvalTask, PlotArgs, SweepArgs, SynthArgs, TrainArgs};

pub(crate) fn execute(cli: Cli, command_line: Vec<String>, stdout: &mut dyn Write) -> CliResult<()> {
    let manifest = RunManifest::new(command_line, cli.seed, Utc::now());
    match cli.command {
        Command::SynthData(a) => synth(a, cli.seed, manifest),
        Command::Train(a) => train_cmd(a, cli.seed, manifest),
        Command::Convert(a) => convert(a, manifest),
        Command::Eval(a) => eval(a, stdout),
        Command::Embed(a) => embed(a, manifest),
        Command::Plot(a) => plot(a, manifest),
        Command::Sweep(a) => sweep(a, cli.seed, manifest),
    }
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).at(p)?;
            serde_json::from_str(&text).at(p)
        }
    }
}

fn snapshot<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("config types serialize")
}

fn finish(mut manifest: RunManifest, primary: &Path, extra: &[&Path]) -> CliResult<()> {
    manifest.outputs = std::iter::once(primary)
        .chain(extra.iter().copied())
        .map(|p| p.display().to_string())
        .collect();
    manifest.finish(primary).at(primary)?;
    Ok(())
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    load_dataset(path).at(path)
}

fn synth(a: SynthArgs, seed: u64, mut manifest: RunManifest) -> CliResult<()> {
    let spec = SynthSpec {
        seed,
        ..read_json::<SynthSpec>(a.spec.as_deref())?
    };
    let data = synth_dataset(&spec)?;
    save_dataset(&data, &a.out).at(&a.out)?;
    manifest.config = snapshot(&spec);
    finish(manifest, &a.out, &[])
}

fn model_config(path: Option<&Path>, seed: u64, steps: Option<usize>) -> CliResult<ModelConfig> {
    let cfg = ModelConfig {
        seed,
        ..read_json::<ModelConfig>(path)?
    };
    Ok(match steps {
        Some(n) if n >= 1 => cfg.scaled_to(n),
        Some(_) => return Err(CliError::Usage("--steps must be at least 1".into())),
        None => cfg,
    })
}

pub(crate) fn history_csv(history: &[StepRecord]) -> String {
    let mut out = String::from("step,learning_rate,recon,kl,commitment,codebook,beta,total\n");
    for r in history {
        let l = &r.loss;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step, r.learning_rate, l.recon, l.kl, l.commitment, l.codebook, l.beta, l.total
        ));
    }
    out
}

fn history_path(out: &Path) -> std::path::PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".loss.csv");
    name.into()
}

fn train_cmd(a: TrainArgs, seed: u64, mut manifest: RunManifest) -> CliResult<()> {
    let cfg = model_config(a.config.as_deref(), seed, a.steps)?;
    let data = load_data(&a.data)?;
    let trained = match &a.init {
        None => train(&cfg, &data)?,
        Some(p) => train_from(&cfg, &data, &load_checkpoint(p).at(p)?)?,
    };
    save_checkpoint(&trained.model, &a.out).at(&a.out)?;
    let hist = history_path(&a.out);
    std::fs::write(&hist, history_csv(&trained.history)).at(&hist)?;
    let last = trained.history.last().map(|r| r.loss);
    if let Some(l) = &last {
        eprintln!(
            "trained {} steps: total {:.6} (recon {:.6}, kl {:.4}, commitment {:.6}, codebook {:.6})",
            trained.history.len(),
            l.total,
            l.recon,
            l.kl,
            l.commitment,
            l.codebook
        );
    }
    manifest.config = snapshot(&cfg);
    manifest.final_loss = last;
    finish(manifest, &a.out, &[&hist])
}

fn convert(a: ConvertArgs, mut manifest: RunManifest) -> CliResult<()> {
    let model = load_checkpoint(&a.model).at(&a.model)?;
    let data = load_data(&a.data)?;
    let utt = data.get(&a.utterance).ok_or_else(|| dart_core::Error::Lookup {
        kind: "utterance",
        id: a.utterance.clone(),
    })?;
    let conversion = Converter::new(&model, &data)?.convert(utt, &a.target_accent)?;
    let out = Dataset::new(vec![Utterance {
        utterance_id: utt.utterance_id.clone(),
        speaker_id: utt.speaker_id.clone(),
        accent_id: a.target_accent.clone(),
        features: conversion.features,
    }])?;
    save_dataset(&out, &a.out).at(&a.out)?;
    manifest.seed = model.config().seed;
    manifest.config = json!({
        "utterance": a.utterance,
        "source_accent": utt.accent_id,
        "target_accent": a.target_accent,
        "model": snapshot(model.config()),
    });
    finish(manifest, &a.out, &[])
}

fn require<'a>(flag: &str, task: &str, v: &'a Option<std::path::PathBuf>) -> CliResult<&'a Path> {
    v.as_deref()
        .ok_or_else(|| CliError::Usage(format!("eval --task {task} needs --{flag}")))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path).at(path)?))
}

fn embeddings_by_id(path: &Path) -> CliResult<BTreeMap<String, EmbeddingRecord>> {
    Ok(read_embeddings_csv(open(path)?)
        .at(path)?
        .into_iter()
        .map(|r| (r.utterance_id.clone(), r))
        .collect())
}

fn transcript_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).at(path)?;
    Ok(text.lines().map(str::to_string).collect())
}

fn eval(a: EvalArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let result = match a.task {
        EvalTask::Mcd => {
            let (rp, sp) = (require("ref", "mcd", &a.reference)?, require("syn", "mcd", &a.syn)?);
            let (reference, synthesized) = (load_data(rp)?, load_data(sp)?);
            let mut total = 0.0;
            for s in &synthesized.utterances {
                let r = reference.get(&s.utterance_id).ok_or_else(|| dart_core::Error::Lookup {
                    kind: "reference utterance",
                    id: s.utterance_id.clone(),
                })?;
                total += mcd(&r.features, &s.features, a.skip_c0)?;
            }
            if synthesized.is_empty() {
                return Err(dart_core::Error::InsufficientData("no synthesized utterances".into()).into());
            }
            json!({"mcd": total / synthesized.len() as f64, "pairs": synthesized.len(), "skip_c0": a.skip_c0})
        }
        EvalTask::Ffe => {
            let (rp, sp) = (require("ref", "ffe", &a.reference)?, require("syn", "ffe", &a.syn)?);
            let r = F0Track::read_csv(open(rp)?).at(rp)?;
            let s = F0Track::read_csv(open(sp)?).at(sp)?;
            json!({"ffe": ffe(&r, &s, a.threshold)?, "frames": r.frames(), "threshold": a.threshold})
        }
        EvalTask::Cs => {
            let (rp, sp) = (require("ref", "cs", &a.reference)?, require("syn", "cs", &a.syn)?);
            let (reference, synthesized) = (embeddings_by_id(rp)?, embeddings_by_id(sp)?);
            let (branch, kind): (Branch, EmbeddingKind) = (a.branch.into(), a.kind.into());
            let mut refs = Vec::new();
            let mut syns = Vec::new();
            for (id, s) in &synthesized {
                let r = reference.get(id).ok_or_else(|| dart_core::Error::Lookup {
                    kind: "reference embedding",
                    id: id.clone(),
                })?;
                refs.push(r.vector(branch, kind));
                syns.push(s.vector(branch, kind));
            }
            json!({
                "cs": mean_cosine_similarity(&refs, &syns)?,
                "pairs": refs.len(),
                "branch": branch.as_str(),
                "kind": kind.as_str(),
            })
        }
        EvalTask::Wer => {
            let (rp, hp) = (require("ref", "wer", &a.reference)?, require("hyp", "wer", &a.hyp)?);
            let (refs, hyps) = (transcript_lines(rp)?, transcript_lines(hp)?);
            if refs.len() != hyps.len() {
                return Err(dart_core::Error::Dimension(format!(
                    "{} reference lines, {} hypothesis lines",
                    refs.len(),
                    hyps.len()
                ))
                .into());
            }
            let (mut s, mut d, mut i, mut n) = (0, 0, 0, 0);
            for (r, h) in refs.iter().zip(&hyps) {
                let rt: Vec<&str> = r.split_whitespace().collect();
                let ht: Vec<&str> = h.split_whitespace().collect();
                if rt.is_empty() {
                    i += ht.len();
                    continue;
                }
                let w = wer(&rt, &ht)?;
                s += w.substitutions;
                d += w.deletions;
                i += w.insertions;
                n += rt.len();
            }
            if n == 0 {
                return Err(dart_core::Error::Contract("reference transcripts contain no tokens".into()).into());
            }
            json!({
                "wer": (s + d + i) as f64 / n as f64,
                "substitutions": s,
                "deletions": d,
                "insertions": i,
                "reference_tokens": n,
            })
        }
        EvalTask::Bws => {
            let tp = require("trials", "bws", &a.trials)?;
            let trials = read_bws_trials(open(tp)?).at(tp)?;
            let tally = bws_tally(&trials)?;
            let scores: BTreeMap<&str, f64> = tally.iter().map(|(k, t)| (k.as_str(), t.score())).collect();
            let shares: BTreeMap<&str, f64> = tally.iter().map(|(k, t)| (k.as_str(), t.best_share())).collect();
            json!({"scores": scores, "best_share": shares, "counts": tally, "trials": trials.len()})
        }
        EvalTask::Mos => {
            let rp = require("ratings", "mos", &a.ratings)?;
            let ratings = read_ratings(open(rp)?).at(rp)?;
            let m = mos_summary(&ratings)?;
            json!({"mos": m.mean, "ci95": m.ci95, "n": m.n})
        }
    };
    let text = serde_json::to_string(&result).map_err(dart_core::Error::from)?;
    writeln!(stdout, "{text}").map_err(dart_core::Error::from)?;
    Ok(())
}

fn embed(a: EmbedArgs, mut manifest: RunManifest) -> CliResult<()> {
    let model = load_checkpoint(&a.model).at(&a.model)?;
    let data = load_data(&a.data)?;
    let records = extract_embeddings(&model, &data)?;
    let file = File::create(&a.out).at(&a.out)?;
    write_embeddings_csv(&records, BufWriter::new(file)).at(&a.out)?;
    manifest.seed = model.config().seed;
    manifest.config = snapshot(model.config());
    finish(manifest, &a.out, &[])
}

fn plot(a: PlotArgs, mut manifest: RunManifest) -> CliResult<()> {
    let records = read_embeddings_csv(open(&a.embeddings)?).at(&a.embeddings)?;
    let (branch, kind): (Branch, EmbeddingKind) = (a.branch.into(), a.kind.into());
    let label: LabelKind = a.color_by.into();
    let vectors: Vec<&[f64]> = records.iter().map(|r| r.vector(branch, kind)).collect();
    let coords = pca2(&vectors)?.coords;
    let labels: Vec<String> = records.iter().map(|r| r.label(label).to_string()).collect();
    let title = format!(
        "{} branch ({}) colored by {}",
        branch,
        kind,
        Branch::from(a.color_by)
    );
    write_scatter_svg(&coords, &labels, &title, &a.out).at(&a.out)?;
    manifest.config = json!({
        "embeddings": a.embeddings.display().to_string(),
        "branch": branch.as_str(),
        "kind": kind.as_str(),
        "color_by": Branch::from(a.color_by).as_str(),
    });
    finish(manifest, &a.out, &[])
}

#[derive(Debug, Clone, Serialize)]
pub(crate) struct SweepRow {
    codebook_size: usize,
    seed: u64,
    recon: f64,
    kl: f64,
    accent_branch_accuracy: f64,
    speaker_branch_accuracy: f64,
    accent_branch_speaker_accuracy: f64,
    speaker_branch_accent_accuracy: f64,
}

fn sweep_one(base: &ModelConfig, size: usize, data: &Dataset) -> dart_core::Result<SweepRow> {
    let seed = base.seed + size as u64;
    let mut cfg = ModelConfig { seed, ..base.clone() };
    cfg.codebook_sizes.speaker = size;
    cfg.codebook_sizes.accent = size;
    let model = train(&cfg, data)?.model;
    let utts: Vec<&Utterance> = data.utterances.iter().collect();
    let loss = model.evaluate_loss(&utts)?;
    let records = extract_embeddings(&model, data)?;
    let acc = |label, branch| centroid_accuracy(&records, label, branch, EmbeddingKind::Grouped);
    Ok(SweepRow {
        codebook_size: size,
        seed,
        recon: loss.recon,
        kl: loss.kl,
        accent_branch_accuracy: acc(LabelKind::Accent, Branch::Accent)?,
        speaker_branch_accuracy: acc(LabelKind::Speaker, Branch::Speaker)?,
        accent_branch_speaker_accuracy: acc(LabelKind::Speaker, Branch::Accent)?,
        speaker_branch_accent_accuracy: acc(LabelKind::Accent, Branch::Speaker)?,
    })
}

pub(crate) fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "codebook_size,seed,recon,kl,accent_branch_accuracy,speaker_branch_accuracy,\
         accent_branch_speaker_accuracy,speaker_branch_accent_accuracy\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.codebook_size,
            r.seed,
            r.recon,
            r.kl,
            r.accent_branch_accuracy,
            r.speaker_branch_accuracy,
            r.accent_branch_speaker_accuracy,
            r.speaker_branch_accent_accuracy
        ));
    }
    out
}

fn sweep(a: SweepArgs, seed: u64, mut manifest: RunManifest) -> CliResult<()> {
    if a.codebook_sizes.contains(&0) {
        return Err(CliError::Usage("codebook sizes must be at least 1".into()));
    }
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let base = model_config(a.config.as_deref(), seed, a.steps)?;
    let data = load_data(&a.data)?;
    let mut rows: Vec<Option<dart_core::Result<SweepRow>>> = (0..a.codebook_sizes.len()).map(|_| None).collect();
    for chunk in (0..a.codebook_sizes.len()).collect::<Vec<_>>().chunks(a.jobs) {
        let results: Vec<(usize, dart_core::Result<SweepRow>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let (base, data, size) = (&base, &data, a.codebook_sizes[i]);
                    (i, s.spawn(move || sweep_one(base, size, data)))
                })
                .collect();
            handles
                .into_iter()
                .map(|(i, h)| (i, h.join().expect("sweep worker panicked")))
                .collect()
        });
        for (i, r) in results {
            rows[i] = Some(r);
        }
    }
    let rows = rows
        .into_iter()
        .map(|r| r.expect("every size ran"))
        .collect::<dart_core::Result<Vec<_>>>()?;
    std::fs::write(&a.out, sweep_table(&rows)).at(&a.out)?;
    manifest.config = json!({"base": snapshot(&base), "codebook_sizes": a.codebook_sizes, "jobs": a.jobs});
    finish(manifest, &a.out, &[])
}
