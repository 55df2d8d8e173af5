//! Grouped variational posteriors.
//!
//! Each observation gets a diagonal Gaussian posterior. Observations that
//! share a group label pool their evidence into one group posterior by the
//! product of Gaussians: precisions add, and the group mean is the
//! precision-weighted average of member means. KL terms are taken against a
//! standard normal prior.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

/// Bounds applied to encoder log-variances before they are exponentiated.
pub const LOG_VARIANCE_MIN: f64 = -10.0;
pub const LOG_VARIANCE_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    mean: Vec<f64>,
    log_variance: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() || mean.is_empty() {
            return Err(Error::dim(format!(
                "posterior mean has {} coordinates, log-variance {}",
                mean.len(),
                log_variance.len()
            )));
        }
        if let Some(i) = log_variance
            .iter()
            .position(|lv| !(lv.exp().is_finite() && lv.exp() > 0.0))
        {
            return Err(Error::Validation(format!(
                "variance at coordinate {i} is not finite and positive (log-variance {})",
                log_variance[i]
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Validation("posterior mean must be finite".into()));
        }
        Ok(Self { mean, log_variance })
    }

    pub fn from_variance(mean: Vec<f64>, variance: &[f64]) -> Result<Self> {
        Self::new(mean, variance.iter().map(|v| v.ln()).collect())
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_variance: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_variance(&self) -> &[f64] {
        &self.log_variance
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_variance.iter().map(|lv| lv.exp()).collect()
    }
}

/// Mean and log-variance nodes for a block of posteriors, one per row
/// (`[n, D]` each).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PosteriorNodes {
    pub mean: NodeId,
    pub log_variance: NodeId,
}

impl PosteriorNodes {
    /// Loads plain posteriors into `graph` as constants, one row each.
    pub fn constant(graph: &mut Graph, posteriors: &[GaussianPosterior]) -> Result<Self> {
        let (mean, lv) = stack(posteriors)?;
        Ok(Self {
            mean: graph.constant(mean),
            log_variance: graph.constant(lv),
        })
    }

    /// Reads row `i` back as a plain posterior.
    pub fn row(&self, graph: &Graph, i: usize) -> Result<GaussianPosterior> {
        Ok(GaussianPosterior {
            mean: graph.value(self.mean)?.row_slice(i)?.to_vec(),
            log_variance: graph.value(self.log_variance)?.row_slice(i)?.to_vec(),
        })
    }

    pub fn rows(&self, graph: &Graph) -> Result<usize> {
        Ok(graph.value(self.mean)?.matrix_dims()?.0)
    }
}

fn stack(posteriors: &[GaussianPosterior]) -> Result<(Tensor, Tensor)> {
    let first = posteriors
        .first()
        .ok_or_else(|| Error::contract("at least one posterior is required"))?;
    let d = first.dim();
    if let Some(p) = posteriors.iter().find(|p| p.dim() != d) {
        return Err(Error::dim(format!(
            "posterior dimensions differ: {d} and {}",
            p.dim()
        )));
    }
    let means: Vec<&[f64]> = posteriors.iter().map(|p| p.mean()).collect();
    let lvs: Vec<&[f64]> = posteriors.iter().map(|p| p.log_variance()).collect();
    Ok((Tensor::from_rows(&means)?, Tensor::from_rows(&lvs)?))
}

/// Partition of observations into labelled groups. Group ids follow the
/// sorted order of labels, members keep observation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    labels: Vec<String>,
    group_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl GroupIndex {
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            by_label.entry(l.as_ref()).or_default().push(i);
        }
        let mut group_of = vec![0; labels.len()];
        let mut names = Vec::with_capacity(by_label.len());
        let mut members = Vec::with_capacity(by_label.len());
        for (g, (label, idx)) in by_label.into_iter().enumerate() {
            for &i in &idx {
                group_of[i] = g;
            }
            names.push(label.to_string());
            members.push(idx);
        }
        Self {
            labels: names,
            group_of,
            members,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn observations(&self) -> usize {
        self.group_of.len()
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    pub fn label(&self, group: usize) -> &str {
        &self.labels[group]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn group_by_label(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }
}

/// Product-of-Gaussians accumulation of rows `members` of `posts` into a
/// single `[1, D]` posterior.
///
/// A single member is returned unchanged (a gathered row), so the
/// one-member case is an exact identity rather than a round trip through
/// `exp`/`log`.
pub fn accumulate_group_nodes(
    graph: &mut Graph,
    posts: PosteriorNodes,
    members: &[usize],
) -> Result<PosteriorNodes> {
    if members.is_empty() {
        return Err(Error::contract("cannot accumulate an empty group"));
    }
    let mean_rows = graph.gather_rows(posts.mean, members.to_vec())?;
    let lv_rows = graph.gather_rows(posts.log_variance, members.to_vec())?;
    if members.len() == 1 {
        return Ok(PosteriorNodes {
            mean: mean_rows,
            log_variance: lv_rows,
        });
    }
    let neg_lv = graph.scale(lv_rows, -1.0)?;
    let precision = graph.exp(neg_lv)?;
    let ones = graph.constant(Tensor::filled(&[1, members.len()], 1.0)?);
    let total_precision = graph.matmul(ones, precision)?;
    let weighted = graph.mul(precision, mean_rows)?;
    let weighted_sum = graph.matmul(ones, weighted)?;
    let log_total = graph.log(total_precision)?;
    let log_variance = graph.scale(log_total, -1.0)?;
    let variance = graph.exp(log_variance)?;
    let mean = graph.mul(weighted_sum, variance)?;
    Ok(PosteriorNodes { mean, log_variance })
}

/// Accumulates every group of `groups` and stacks the results as `[G, D]`
/// in group-id order.
pub fn accumulate_all_groups(
    graph: &mut Graph,
    posts: PosteriorNodes,
    groups: &GroupIndex,
) -> Result<PosteriorNodes> {
    let n = posts.rows(graph)?;
    if n != groups.observations() {
        return Err(Error::dim(format!(
            "{n} posteriors but the group index covers {} observations",
            groups.observations()
        )));
    }
    let mut means = Vec::with_capacity(groups.len());
    let mut lvs = Vec::with_capacity(groups.len());
    for g in 0..groups.len() {
        let acc = accumulate_group_nodes(graph, posts, groups.members(g))?;
        means.push(acc.mean);
        lvs.push(acc.log_variance);
    }
    Ok(PosteriorNodes {
        mean: graph.concat_rows(&means)?,
        log_variance: graph.concat_rows(&lvs)?,
    })
}

/// Product-of-Gaussians accumulation of plain posteriors.
pub fn accumulate_group(posteriors: &[GaussianPosterior]) -> Result<GaussianPosterior> {
    let mut graph = Graph::new();
    let posts = PosteriorNodes::constant(&mut graph, posteriors)?;
    let members: Vec<usize> = (0..posteriors.len()).collect();
    let acc = accumulate_group_nodes(&mut graph, posts, &members)?;
    acc.row(&graph, 0)
}

/// `mean + exp(0.5 * log_variance) * noise`, differentiable in the posterior.
pub fn reparameterize_nodes(graph: &mut Graph, posts: PosteriorNodes, noise: Tensor) -> Result<NodeId> {
    let mean_shape = graph.value(posts.mean)?.shape().to_vec();
    if noise.shape() != mean_shape.as_slice() {
        return Err(Error::dim(format!(
            "noise shape {:?} does not match posterior shape {mean_shape:?}",
            noise.shape()
        )));
    }
    let half = graph.scale(posts.log_variance, 0.5)?;
    let std = graph.exp(half)?;
    let eps = graph.constant(noise);
    let scaled = graph.mul(std, eps)?;
    graph.add(posts.mean, scaled)
}

pub fn reparameterize(p: &GaussianPosterior, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != p.dim() {
        return Err(Error::dim(format!(
            "noise has {} coordinates, posterior {}",
            noise.len(),
            p.dim()
        )));
    }
    let mut graph = Graph::new();
    let posts = PosteriorNodes::constant(&mut graph, std::slice::from_ref(p))?;
    let z = reparameterize_nodes(&mut graph, posts, Tensor::row(noise)?)?;
    Ok(graph.value(z)?.values().to_vec())
}

/// Sum over all rows and coordinates of
/// `0.5 * (mean^2 + exp(lv) - lv - 1)`: the KL divergence of each row's
/// posterior from a standard normal, summed.
pub fn kl_standard_normal_nodes(graph: &mut Graph, posts: PosteriorNodes) -> Result<NodeId> {
    let shape = graph.value(posts.mean)?.shape().to_vec();
    let mean_sq = graph.square(posts.mean)?;
    let var = graph.exp(posts.log_variance)?;
    let a = graph.add(mean_sq, var)?;
    let b = graph.sub(a, posts.log_variance)?;
    let ones = graph.constant(Tensor::filled(&shape, 1.0)?);
    let c = graph.sub(b, ones)?;
    let s = graph.sum(c)?;
    graph.scale(s, 0.5)
}

pub fn kl_standard_normal(p: &GaussianPosterior) -> Result<f64> {
    let mut graph = Graph::new();
    let posts = PosteriorNodes::constant(&mut graph, std::slice::from_ref(p))?;
    let kl = kl_standard_normal_nodes(&mut graph, posts)?;
    graph.scalar_value(kl)
}

/// Whether a latent branch shares one posterior per group or keeps one per
/// observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlBranch {
    Grouped,
    PerObservation,
}

/// KL term of one branch for a mini-batch, divided by the batch size.
///
/// `Grouped` accumulates each group present in the batch and sums the
/// group KLs; `PerObservation` sums per-row KLs.
pub fn kl_loss_batch_nodes(
    graph: &mut Graph,
    per_obs: PosteriorNodes,
    groups: &GroupIndex,
    branch: KlBranch,
) -> Result<NodeId> {
    let batch = per_obs.rows(graph)?;
    if batch != groups.observations() {
        return Err(Error::dim(format!(
            "{batch} posteriors but the group index covers {} observations",
            groups.observations()
        )));
    }
    let source = match branch {
        KlBranch::PerObservation => per_obs,
        KlBranch::Grouped => accumulate_all_groups(graph, per_obs, groups)?,
    };
    let kl = kl_standard_normal_nodes(graph, source)?;
    graph.scale(kl, 1.0 / batch as f64)
}

pub fn kl_loss_batch(
    per_obs: &[GaussianPosterior],
    groups: &GroupIndex,
    branch: KlBranch,
) -> Result<f64> {
    let mut graph = Graph::new();
    let posts = PosteriorNodes::constant(&mut graph, per_obs)?;
    let kl = kl_loss_batch_nodes(&mut graph, posts, groups, branch)?;
    graph.scalar_value(kl)
}
