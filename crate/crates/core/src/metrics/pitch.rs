use std::io::Read;

use crate::error::{Error, Result};

/// Conventional gross pitch error threshold (relative deviation).
pub const DEFAULT_GROSS_THRESHOLD: f64 = 0.2;

/// Per-frame fundamental frequency in Hz; `0` marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    f0_hz: Vec<f64>,
}

impl F0Track {
    pub fn new(f0_hz: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = f0_hz.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Validation(format!("frame {i}: f0 {v} is not a finite value >= 0")));
        }
        Ok(Self { f0_hz })
    }

    pub fn frames(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.f0_hz
    }

    /// Reads the two-column `frame_index,f0_hz` CSV form. Rows must be in
    /// frame order starting at 0.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let mut values = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row?;
            let line = i + 2;
            if row.len() != 2 {
                return Err(Error::Schema {
                    line,
                    message: format!("expected 2 columns, found {}", row.len()),
                });
            }
            let parse_err = |s: &str| Error::Parse {
                line,
                message: format!("`{s}` is not a number"),
            };
            let idx: usize = row[0].trim().parse().map_err(|_| parse_err(&row[0]))?;
            if idx != i {
                return Err(Error::Schema {
                    line,
                    message: format!("frame index {idx}, expected {i}"),
                });
            }
            values.push(row[1].trim().parse::<f64>().map_err(|_| parse_err(&row[1]))?);
        }
        Self::new(values)
    }
}

/// F0 frame error: share of frames with a voicing mismatch, or with both
/// voiced and `|syn - ref| / ref > gross_threshold`.
pub fn ffe(reference: &F0Track, synthesized: &F0Track, gross_threshold: f64) -> Result<f64> {
    if reference.frames() != synthesized.frames() {
        return Err(Error::dim(format!(
            "{} reference frames vs {} synthesized",
            reference.frames(),
            synthesized.frames()
        )));
    }
    if reference.frames() == 0 {
        return Err(Error::contract("F0 frame error needs at least one frame"));
    }
    let errors = reference
        .values()
        .iter()
        .zip(synthesized.values())
        .filter(|&(&r, &s)| match (r > 0.0, s > 0.0) {
            (true, true) => (s - r).abs() / r > gross_threshold,
            (a, b) => a != b,
        })
        .count();
    Ok(errors as f64 / reference.frames() as f64)
}
