use std::collections::BTreeMap;

use crate::embedding::{EmbeddingKind, EmbeddingRecord, LabelKind};
use crate::error::{Error, Result};
use crate::vq::Branch;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Leave-one-out nearest-centroid accuracy under Euclidean distance.
///
/// Each point is scored against the centroids of all labels, its own label's
/// centroid recomputed without it. A point counts as correct only when its
/// own centroid is strictly nearest: another centroid within
/// `1e-12 + 1e-9 * d_min` of the minimum makes the decision a tie, and a tie
/// is a miss.
pub fn centroid_accuracy_points<P: AsRef<[f64]>, L: AsRef<str>>(points: &[P], labels: &[L]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::dim(format!("{} points, {} labels", points.len(), labels.len())));
    }
    let dim = points.first().map_or(0, |p| p.as_ref().len());
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::dim(format!("points of width {dim} and {}", p.as_ref().len())));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        members.entry(l.as_ref()).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::InsufficientData(format!("{} distinct label(s), need 2", members.len())));
    }
    if let Some((l, m)) = members.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::InsufficientData(format!("label `{l}` has {} record(s), need 2", m.len())));
    }

    let sums: Vec<(&str, Vec<f64>, usize)> = members
        .iter()
        .map(|(l, idx)| {
            let mut s = vec![0.0; dim];
            for &i in idx {
                for (acc, v) in s.iter_mut().zip(points[i].as_ref()) {
                    *acc += v;
                }
            }
            (*l, s, idx.len())
        })
        .collect();
    let centroids: Vec<Vec<f64>> = sums
        .iter()
        .map(|(_, s, n)| s.iter().map(|v| v / *n as f64).collect())
        .collect();

    let mut correct = 0usize;
    let mut held_out = vec![0.0; dim];
    for (i, p) in points.iter().enumerate() {
        let p = p.as_ref();
        let own = sums.iter().position(|(l, _, _)| *l == labels[i].as_ref()).expect("label indexed");
        let (_, s, n) = &sums[own];
        for ((h, sv), pv) in held_out.iter_mut().zip(s).zip(p) {
            *h = (sv - pv) / (*n - 1) as f64;
        }
        let dists: Vec<f64> = centroids
            .iter()
            .enumerate()
            .map(|(k, c)| distance(p, if k == own { &held_out } else { c }))
            .collect();
        let d_min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = 1e-12 + 1e-9 * d_min;
        let near: Vec<usize> = (0..dists.len()).filter(|&k| dists[k] <= d_min + tol).collect();
        if near == [own] {
            correct += 1;
        }
    }
    Ok(correct as f64 / points.len() as f64)
}

/// [`centroid_accuracy_points`] over one embedding field of the records.
pub fn centroid_accuracy(
    records: &[EmbeddingRecord],
    label: LabelKind,
    branch: Branch,
    kind: EmbeddingKind,
) -> Result<f64> {
    let points: Vec<&[f64]> = records.iter().map(|r| r.vector(branch, kind)).collect();
    let labels: Vec<&str> = records.iter().map(|r| r.label(label)).collect();
    centroid_accuracy_points(&points, &labels)
}
