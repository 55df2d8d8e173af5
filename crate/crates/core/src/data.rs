//! Grouped utterance datasets: a factorized synthetic generator with known
//! ground truth, JSON-lines persistence, and a stratified split.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker_id: String,
    pub accent_id: String,
    /// `T x F` feature matrix, one row per frame.
    pub features: Vec<Vec<f64>>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.utterance_id;
        if self.utterance_id.is_empty() || self.speaker_id.is_empty() || self.accent_id.is_empty() {
            return Err(Error::Validation(format!("utterance `{id}` has an empty id field")));
        }
        let f = self.feature_dim();
        if self.features.is_empty() || f == 0 {
            return Err(Error::Validation(format!("utterance `{id}` has no frames or no features")));
        }
        if let Some(t) = self.features.iter().position(|row| row.len() != f) {
            return Err(Error::Validation(format!(
                "utterance `{id}` frame {t} has {} features, expected {f}",
                self.features[t].len()
            )));
        }
        if self.features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("utterance `{id}` has non-finite features")));
        }
        Ok(())
    }

    pub fn flat_features(&self) -> Vec<f64> {
        self.features.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let d = Self { utterances };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.utterances.first().map(Utterance::feature_dim)
    }

    pub fn get(&self, utterance_id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.utterance_id == utterance_id)
    }

    pub fn speaker_labels(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.speaker_id.as_str()).collect()
    }

    pub fn accent_labels(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.accent_id.as_str()).collect()
    }

    /// Per-utterance checks plus a uniform feature dimension and unique ids.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let f = self.feature_dim();
        for u in &self.utterances {
            u.validate()?;
            if Some(u.feature_dim()) != f {
                return Err(Error::Validation(format!(
                    "utterance `{}` has feature_dim {}, dataset uses {}",
                    u.utterance_id,
                    u.feature_dim(),
                    f.unwrap_or(0)
                )));
            }
            if !seen.insert(u.utterance_id.as_str()) {
                return Err(Error::Validation(format!("duplicate utterance_id `{}`", u.utterance_id)));
            }
        }
        Ok(())
    }
}

/// Parameters of the factorized generator.
///
/// Each frame is `accent_scale * W_a a + speaker_scale * W_s s +
/// utterance_scale * W_u u_t + noise_scale * eps_t`, with one accent factor
/// `a` per accent, one speaker factor `s` per speaker, a fresh factor `u_t`
/// per frame of every utterance, and white noise `eps_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_accents: usize,
    pub speakers_per_accent: usize,
    pub utterances_per_speaker: usize,
    pub frames: usize,
    pub feature_dim: usize,
    /// Dimension of each latent factor.
    pub factor_dim: usize,
    pub accent_scale: f64,
    pub speaker_scale: f64,
    pub utterance_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_accents: 6,
            speakers_per_accent: 4,
            utterances_per_speaker: 10,
            frames: 16,
            feature_dim: 12,
            factor_dim: 4,
            accent_scale: 1.0,
            speaker_scale: 8.0,
            utterance_scale: 0.5,
            noise_scale: 0.1,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("n_accents", self.n_accents),
            ("speakers_per_accent", self.speakers_per_accent),
            ("utterances_per_speaker", self.utterances_per_speaker),
            ("frames", self.frames),
            ("feature_dim", self.feature_dim),
            ("factor_dim", self.factor_dim),
        ] {
            if v == 0 {
                bad.push(name);
            }
        }
        for (name, v) in [
            ("accent_scale", self.accent_scale),
            ("speaker_scale", self.speaker_scale),
            ("utterance_scale", self.utterance_scale),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad.push(name);
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid synth spec fields: {}", bad.join(", "))))
        }
    }

    pub fn accent_id(a: usize) -> String {
        format!("accent_{a:02}")
    }

    pub fn speaker_id(a: usize, s: usize) -> String {
        format!("spk_{a:02}_{s:02}")
    }
}

/// The latent factors behind a generated dataset, for sanity checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFactors {
    pub accent: Vec<Vec<f64>>,
    /// Indexed `[accent][speaker]`.
    pub speaker: Vec<Vec<Vec<f64>>>,
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `W x` for a row-major `F x k` matrix.
fn mix(w: &[f64], x: &[f64], feature_dim: usize) -> Vec<f64> {
    let k = x.len();
    (0..feature_dim)
        .map(|i| w[i * k..(i + 1) * k].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    synth_dataset_with_factors(spec).map(|(d, _)| d)
}

/// Generates the dataset and returns the factors it was drawn from.
///
/// Speaker factors are centred within each accent (and rescaled to unit
/// variance) so that all accent-level variation lives in the accent factor.
pub fn synth_dataset_with_factors(spec: &SynthSpec) -> Result<(Dataset, SynthFactors)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (f, k) = (spec.feature_dim, spec.factor_dim);
    let norm = 1.0 / (k as f64).sqrt();
    let mut mixing = || -> Vec<f64> { normals(&mut rng, f * k).into_iter().map(|v| v * norm).collect() };
    let w_accent = mixing();
    let w_speaker = mixing();
    let w_utterance = mixing();

    let accent: Vec<Vec<f64>> = (0..spec.n_accents).map(|_| normals(&mut rng, k)).collect();
    let n_spk = spec.speakers_per_accent;
    let speaker: Vec<Vec<Vec<f64>>> = (0..spec.n_accents)
        .map(|_| {
            let mut raw: Vec<Vec<f64>> = (0..n_spk).map(|_| normals(&mut rng, k)).collect();
            if n_spk > 1 {
                let rescale = (n_spk as f64 / (n_spk as f64 - 1.0)).sqrt();
                for j in 0..k {
                    let m = raw.iter().map(|s| s[j]).sum::<f64>() / n_spk as f64;
                    raw.iter_mut().for_each(|s| s[j] = (s[j] - m) * rescale);
                }
            }
            raw
        })
        .collect();

    let mut utterances = Vec::with_capacity(spec.n_accents * n_spk * spec.utterances_per_speaker);
    for (a, a_factor) in accent.iter().enumerate() {
        let a_part = mix(&w_accent, a_factor, f);
        for (s, s_factor) in speaker[a].iter().enumerate() {
            let s_part = mix(&w_speaker, s_factor, f);
            for u in 0..spec.utterances_per_speaker {
                let features = (0..spec.frames)
                    .map(|_| {
                        let u_t = normals(&mut rng, k);
                        let u_part = mix(&w_utterance, &u_t, f);
                        let eps = normals(&mut rng, f);
                        (0..f)
                            .map(|i| {
                                spec.accent_scale * a_part[i]
                                    + spec.speaker_scale * s_part[i]
                                    + spec.utterance_scale * u_part[i]
                                    + spec.noise_scale * eps[i]
                            })
                            .collect()
                    })
                    .collect();
                utterances.push(Utterance {
                    utterance_id: format!("utt_{a:02}_{s:02}_{u:03}"),
                    speaker_id: SynthSpec::speaker_id(a, s),
                    accent_id: SynthSpec::accent_id(a),
                    features,
                });
            }
        }
    }
    Ok((Dataset { utterances }, SynthFactors { accent, speaker }))
}

/// Writes one JSON object per line. Floats use the shortest representation
/// that round-trips exactly (at most 17 significant digits).
pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(data, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(data: &Dataset, w: &mut W) -> Result<()> {
    for u in &data.utterances {
        serde_json::to_writer(&mut *w, u)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// Parses JSON-lines. Blank lines are skipped; line numbers are 1-based.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut utterances: Vec<Utterance> = Vec::new();
    let mut first: Option<(usize, usize)> = None;
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let u: Utterance = serde_json::from_str(&line).map_err(|e| {
            if e.classify() == serde_json::error::Category::Data {
                Error::Schema {
                    line: line_no,
                    message: e.to_string(),
                }
            } else {
                Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                }
            }
        })?;
        u.validate()
            .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        match first {
            None => first = Some((line_no, u.feature_dim())),
            Some((first_line, f)) if f != u.feature_dim() => {
                return Err(Error::Validation(format!(
                    "feature_dim {f} on line {first_line} but {} on line {line_no}",
                    u.feature_dim()
                )));
            }
            Some(_) => {}
        }
        if !seen.insert(u.utterance_id.clone()) {
            return Err(Error::Validation(format!(
                "line {line_no}: duplicate utterance_id `{}`",
                u.utterance_id
            )));
        }
        utterances.push(u);
    }
    Ok(Dataset { utterances })
}

/// Stratified split by `(speaker_id, accent_id)`: each stratum sends
/// `floor(fraction * count)` utterances, chosen by a seeded shuffle, to the
/// validation side. Both sides keep dataset order.
pub fn split(data: &Dataset, holdout_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::contract(format!(
            "holdout fraction must lie in [0, 1), got {holdout_fraction}"
        )));
    }
    let mut strata: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, u) in data.utterances.iter().enumerate() {
        strata
            .entry((u.speaker_id.as_str(), u.accent_id.as_str()))
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = vec![false; data.len()];
    for members in strata.values_mut() {
        let take = (holdout_fraction * members.len() as f64).floor() as usize;
        members.shuffle(&mut rng);
        for &i in members.iter().take(take) {
            held[i] = true;
        }
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (u, h) in data.utterances.iter().zip(held) {
        if h {
            valid.push(u.clone());
        } else {
            train.push(u.clone());
        }
    }
    Ok((Dataset { utterances: train }, Dataset { utterances: valid }))
}
