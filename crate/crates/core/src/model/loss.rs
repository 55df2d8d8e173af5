use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

/// `||xhat - x||_F / n` for `n` elements. The gradient at `xhat == x` is zero.
pub fn reconstruction_loss(graph: &mut Graph, xhat: NodeId, x: NodeId) -> Result<NodeId> {
    let (a, b) = (graph.value(xhat)?, graph.value(x)?);
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "reconstruction {:?} vs target {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.len() as f64;
    let diff = graph.sub(xhat, x)?;
    let sq = graph.square(diff)?;
    let total = graph.sum(sq)?;
    let norm = graph.sqrt(total)?;
    graph.scale(norm, 1.0 / n)
}

/// Batch mean of [`reconstruction_loss`] where `decoded` holds one row per
/// utterance, repeated over that utterance's frames.
pub fn reconstruction_loss_rows(graph: &mut Graph, decoded: NodeId, utterances: &[&Utterance]) -> Result<NodeId> {
    let (rows, f) = graph.value(decoded)?.matrix_dims()?;
    if rows != utterances.len() {
        return Err(Error::dim(format!("{rows} decoded rows for {} utterances", utterances.len())));
    }
    if let Some(u) = utterances.iter().find(|u| u.feature_dim() != f) {
        return Err(Error::dim(format!(
            "utterance `{}` has {} features, decoder emits {f}",
            u.utterance_id,
            u.feature_dim()
        )));
    }
    let frames: Vec<usize> = utterances.iter().map(|u| u.frames()).collect();
    let total: usize = frames.iter().sum();
    let repeat: Vec<usize> = frames.iter().enumerate().flat_map(|(i, &t)| std::iter::repeat_n(i, t)).collect();
    let flat: Vec<f64> = utterances.iter().flat_map(|u| u.features.iter().flatten().copied()).collect();

    let x = graph.constant(Tensor::new(&[total, f], flat)?);
    let xhat = graph.gather_rows(decoded, repeat)?;
    let diff = graph.sub(xhat, x)?;
    let sq = graph.square(diff)?;
    let per_frame_mean = graph.segment_mean(sq, frames.clone())?;
    let ones = graph.constant(Tensor::filled(&[f, 1], 1.0)?);
    let mean_over_frames = graph.matmul(per_frame_mean, ones)?;
    let lengths = graph.constant(Tensor::new(&[rows, 1], frames.iter().map(|&t| t as f64).collect())?);
    let sum_sq = graph.mul(mean_over_frames, lengths)?;
    let norms = graph.sqrt(sum_sq)?;
    let inv_n = graph.constant(Tensor::new(
        &[rows, 1],
        frames.iter().map(|&t| 1.0 / (t * f) as f64).collect(),
    )?);
    let per_utt = graph.mul(norms, inv_n)?;
    let summed = graph.sum(per_utt)?;
    graph.scale(summed, 1.0 / rows as f64)
}

/// Scalar values of the loss terms for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub commitment: f64,
    pub codebook: f64,
    pub total: f64,
    pub beta: f64,
}

impl LossBreakdown {
    /// Sums the terms in the same order the graph does.
    pub fn compose(recon: f64, kl: f64, commitment: f64, codebook: f64, beta: f64) -> Self {
        Self {
            recon,
            kl,
            commitment,
            codebook,
            total: recon + beta * kl + commitment + codebook,
            beta,
        }
    }

    /// Name and value of the first non-finite term, total last.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("recon", self.recon),
            ("kl", self.kl),
            ("commitment", self.commitment),
            ("codebook", self.codebook),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Graph handles for the loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub recon: NodeId,
    pub kl: NodeId,
    pub commitment: NodeId,
    pub codebook: NodeId,
    pub total: NodeId,
    pub beta: f64,
}

impl LossNodes {
    pub fn read(&self, graph: &Graph) -> Result<LossBreakdown> {
        Ok(LossBreakdown {
            recon: graph.scalar_value(self.recon)?,
            kl: graph.scalar_value(self.kl)?,
            commitment: graph.scalar_value(self.commitment)?,
            codebook: graph.scalar_value(self.codebook)?,
            total: graph.scalar_value(self.total)?,
            beta: self.beta,
        })
    }
}
