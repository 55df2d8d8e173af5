//! Per-utterance embedding records and their CSV form.
//!
//! CSV layout: header `utterance_id,speaker_id,accent_id,branch,kind,v0..v{D-1}`,
//! one row per (utterance, branch, kind).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vq::Branch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Per-utterance posterior mean.
    PreVq,
    /// Group-accumulated posterior mean.
    Grouped,
    /// Codeword selected for the grouped latent.
    Quantized,
}

impl EmbeddingKind {
    pub const ALL: [EmbeddingKind; 3] = [EmbeddingKind::PreVq, EmbeddingKind::Grouped, EmbeddingKind::Quantized];

    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingKind::PreVq => "pre_vq",
            EmbeddingKind::Grouped => "grouped",
            EmbeddingKind::Quantized => "quantized",
        }
    }
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_vq" => Ok(EmbeddingKind::PreVq),
            "grouped" => Ok(EmbeddingKind::Grouped),
            "quantized" => Ok(EmbeddingKind::Quantized),
            other => Err(Error::Lookup {
                kind: "embedding kind",
                id: other.to_string(),
            }),
        }
    }
}

/// Which label an embedding is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Speaker,
    Accent,
}

impl FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speaker" => Ok(LabelKind::Speaker),
            "accent" => Ok(LabelKind::Accent),
            other => Err(Error::Lookup {
                kind: "label",
                id: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BranchEmbedding {
    pub pre_vq: Vec<f64>,
    pub grouped: Vec<f64>,
    pub quantized: Vec<f64>,
}

impl BranchEmbedding {
    pub fn get(&self, kind: EmbeddingKind) -> &[f64] {
        match kind {
            EmbeddingKind::PreVq => &self.pre_vq,
            EmbeddingKind::Grouped => &self.grouped,
            EmbeddingKind::Quantized => &self.quantized,
        }
    }

    fn slot(&mut self, kind: EmbeddingKind) -> &mut Vec<f64> {
        match kind {
            EmbeddingKind::PreVq => &mut self.pre_vq,
            EmbeddingKind::Grouped => &mut self.grouped,
            EmbeddingKind::Quantized => &mut self.quantized,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub accent_id: String,
    pub speaker: BranchEmbedding,
    pub accent: BranchEmbedding,
}

impl EmbeddingRecord {
    pub fn branch(&self, branch: Branch) -> &BranchEmbedding {
        match branch {
            Branch::Speaker => &self.speaker,
            Branch::Accent => &self.accent,
        }
    }

    pub fn vector(&self, branch: Branch, kind: EmbeddingKind) -> &[f64] {
        self.branch(branch).get(kind)
    }

    pub fn label(&self, label: LabelKind) -> &str {
        match label {
            LabelKind::Speaker => &self.speaker_id,
            LabelKind::Accent => &self.accent_id,
        }
    }
}

pub fn write_embeddings_csv<W: Write>(records: &[EmbeddingRecord], w: W) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.speaker.pre_vq.len());
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let mut header = vec![
        "utterance_id".to_string(),
        "speaker_id".into(),
        "accent_id".into(),
        "branch".into(),
        "kind".into(),
    ];
    header.extend((0..dim).map(|i| format!("v{i}")));
    out.write_record(&header)?;
    for r in records {
        for branch in Branch::ALL {
            for kind in EmbeddingKind::ALL {
                let v = r.vector(branch, kind);
                if v.len() != dim {
                    return Err(Error::dim(format!(
                        "record `{}` {branch}/{kind} has {} values, expected {dim}",
                        r.utterance_id,
                        v.len()
                    )));
                }
                let mut row = vec![
                    r.utterance_id.clone(),
                    r.speaker_id.clone(),
                    r.accent_id.clone(),
                    branch.to_string(),
                    kind.to_string(),
                ];
                row.extend(v.iter().map(|x| x.to_string()));
                out.write_record(&row)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads the CSV back into records, in order of first appearance.
pub fn read_embeddings_csv<R: Read>(r: R) -> Result<Vec<EmbeddingRecord>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    let fixed = ["utterance_id", "speaker_id", "accent_id", "branch", "kind"];
    if headers.len() < fixed.len() || headers.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::Schema {
            line: 1,
            message: format!("unexpected embedding header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    let dim = headers.len() - fixed.len();
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, EmbeddingRecord> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row?;
        let branch: Branch = row[3].parse()?;
        let kind: EmbeddingKind = row[4].parse()?;
        let values = row
            .iter()
            .skip(fixed.len())
            .map(|s| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("`{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(Error::Schema {
                line,
                message: format!("{} values, header declares {dim}", values.len()),
            });
        }
        let id = row[0].to_string();
        let rec = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            EmbeddingRecord {
                utterance_id: id,
                speaker_id: row[1].to_string(),
                accent_id: row[2].to_string(),
                speaker: BranchEmbedding::default(),
                accent: BranchEmbedding::default(),
            }
        });
        let slot = match branch {
            Branch::Speaker => rec.speaker.slot(kind),
            Branch::Accent => rec.accent.slot(kind),
        };
        *slot = values;
    }
    Ok(order.into_iter().filter_map(|id| by_id.remove(&id)).collect())
}
