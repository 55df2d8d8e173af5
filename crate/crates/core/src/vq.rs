//! Vector-quantization bottlenecks.
//!
//! Each branch owns a codebook of `size` vectors of dimension `dim`. A
//! latent is replaced by its nearest codeword; during training the decoder
//! sees the codeword while the gradient is copied straight through to the
//! pre-quantization latent.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Speaker,
    Accent,
}

impl Branch {
    pub const ALL: [Branch; 2] = [Branch::Speaker, Branch::Accent];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Speaker => "speaker",
            Branch::Accent => "accent",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speaker" => Ok(Branch::Speaker),
            "accent" => Ok(Branch::Accent),
            other => Err(Error::Lookup {
                kind: "branch",
                id: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    branch: Branch,
    entries: Tensor,
    usage_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    pub index: usize,
    pub quantized: Vec<f64>,
    pub pre_quantized: Vec<f64>,
}

impl Codebook {
    pub fn new<R: AsRef<[f64]>>(branch: Branch, rows: &[R]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("a codebook needs at least one entry".into()));
        }
        let entries = Tensor::from_rows(rows)?;
        Self::from_tensor(branch, entries, None)
    }

    pub(crate) fn from_tensor(branch: Branch, entries: Tensor, usage: Option<Vec<u64>>) -> Result<Self> {
        let (size, dim) = match entries.shape() {
            [s, d] => (*s, *d),
            other => return Err(Error::dim(format!("codebook must be a matrix, got {other:?}"))),
        };
        if size == 0 || dim == 0 {
            return Err(Error::Validation("codebook extents must be positive".into()));
        }
        if entries.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("codebook entries must be finite".into()));
        }
        let usage_counts = usage.unwrap_or_else(|| vec![0; size]);
        if usage_counts.len() != size {
            return Err(Error::dim(format!(
                "{} usage counters for {size} entries",
                usage_counts.len()
            )));
        }
        Ok(Self {
            branch,
            entries,
            usage_counts,
        })
    }

    /// Entries drawn uniformly from `[-1/size, 1/size]`.
    pub fn init<R: Rng + ?Sized>(branch: Branch, size: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::Validation("codebook extents must be positive".into()));
        }
        let bound = 1.0 / size as f64;
        let values = (0..size * dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::from_tensor(branch, Tensor::new(&[size, dim], values)?, None)
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn size(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn entry(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.entries.values()[j * d..(j + 1) * d]
    }

    pub fn entries(&self) -> &Tensor {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut Tensor {
        &mut self.entries
    }

    pub fn usage_counts(&self) -> &[u64] {
        &self.usage_counts
    }

    pub fn reset_usage(&mut self) {
        self.usage_counts.iter_mut().for_each(|c| *c = 0);
    }

    pub fn record_usage(&mut self, index: usize) {
        self.usage_counts[index] += 1;
    }

    /// Index of the nearest entry by squared Euclidean distance; ties go to
    /// the lowest index.
    pub fn nearest(&self, z: &[f64]) -> Result<usize> {
        if z.len() != self.dim() {
            return Err(Error::dim(format!(
                "latent has {} coordinates, codebook entries {}",
                z.len(),
                self.dim()
            )));
        }
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (j, e) in self.entries.values().chunks(self.dim()).enumerate() {
            let d: f64 = e.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_dist {
                best = j;
                best_dist = d;
            }
        }
        Ok(best)
    }

    /// Quantizes without touching the usage counters.
    pub fn lookup(&self, z: &[f64]) -> Result<QuantizationResult> {
        let index = self.nearest(z)?;
        Ok(QuantizationResult {
            index,
            quantized: self.entry(index).to_vec(),
            pre_quantized: z.to_vec(),
        })
    }

    pub fn quantize(&mut self, z: &[f64]) -> Result<QuantizationResult> {
        let r = self.lookup(z)?;
        self.record_usage(r.index);
        Ok(r)
    }

    /// `exp` of the entropy of the empirical usage distribution.
    pub fn perplexity(&self) -> Result<f64> {
        perplexity(&self.usage_counts)
    }
}

pub fn perplexity(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Undefined("perplexity of a codebook with no recorded usage".into()));
    }
    let total = total as f64;
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

/// Graph-side quantization of the rows of `z` against the codebook leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNodes {
    pub indices: Vec<usize>,
    /// Pre-quantization latents `[n, D]`.
    pub pre_quantized: NodeId,
    /// Selected codebook rows `[n, D]`, differentiable in the codebook.
    pub codewords: NodeId,
    /// Straight-through output: codeword values, gradient to `pre_quantized`.
    pub quantized: NodeId,
}

/// Quantizes each row of `z`. Index selection reads `book` (the codebook
/// values must match `codebook_node`); usage counters are not touched.
pub fn quantize_nodes(graph: &mut Graph, z: NodeId, codebook_node: NodeId, book: &Codebook) -> Result<QuantizedNodes> {
    let zt = graph.value(z)?;
    let (_, d) = zt.matrix_dims()?;
    if d != book.dim() {
        return Err(Error::dim(format!(
            "latents have {d} coordinates, codebook entries {}",
            book.dim()
        )));
    }
    let indices = zt
        .values()
        .chunks(d)
        .map(|row| book.nearest(row))
        .collect::<Result<Vec<_>>>()?;
    let codewords = graph.gather_rows(codebook_node, indices.clone())?;
    let quantized = graph.straight_through(z, codewords)?;
    Ok(QuantizedNodes {
        indices,
        pre_quantized: z,
        codewords,
        quantized,
    })
}

/// `||z - sg(e)||^2` summed over all rows: pulls the encoder toward its codeword.
pub fn commitment_loss(graph: &mut Graph, pre_quantized: NodeId, codewords: NodeId) -> Result<NodeId> {
    let frozen = graph.stop_gradient(codewords)?;
    let diff = graph.sub(pre_quantized, frozen)?;
    let sq = graph.square(diff)?;
    graph.sum(sq)
}

/// `||sg(z) - e||^2` summed over all rows: pulls the codeword toward the encoder.
pub fn codebook_loss(graph: &mut Graph, pre_quantized: NodeId, codewords: NodeId) -> Result<NodeId> {
    let frozen = graph.stop_gradient(pre_quantized)?;
    let diff = graph.sub(frozen, codewords)?;
    let sq = graph.square(diff)?;
    graph.sum(sq)
}
