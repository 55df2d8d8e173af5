use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic - numeric| / max(1, |analytic|)`.
    pub max_relative_error: f64,
    /// `(leaf, coordinate)` of the worst coordinate, if any was checked.
    pub worst: Option<(usize, usize)>,
    pub checked_coordinates: usize,
    /// Leaves (indices into `point`) skipped because they reach the loss
    /// through a stop-gradient or straight-through node.
    pub excluded_leaves: Vec<usize>,
}

/// Checks the gradient of the scalar function built by `f` at `point`.
///
/// `f` receives a fresh graph and one trainable leaf per entry of `point`
/// and must return the loss node. It is called once for the analytic pass
/// and twice per checked coordinate, so it must be deterministic.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract(format!("step h must be positive, got {h}")));
    }

    let mut graph = Graph::new();
    let leaves: Vec<NodeId> = point.iter().map(|t| graph.parameter(t.clone())).collect();
    let loss = f(&mut graph, &leaves)?;
    let grads = graph.backward(loss)?;
    let blocked = graph.blocked_leaves(loss)?;
    let excluded_leaves: Vec<usize> = leaves
        .iter()
        .enumerate()
        .filter(|(_, id)| blocked.contains(id))
        .map(|(i, _)| i)
        .collect();

    let eval = |values: &[Tensor], leaf: usize, coordinate: usize| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.parameter(t.clone())).collect();
        let out = f(&mut g, &ids)?;
        let v = g.scalar_value(out)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { leaf, coordinate })
        }
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked_coordinates: 0,
        excluded_leaves,
    };
    let mut work: Vec<Tensor> = point.to_vec();
    for (li, &leaf_id) in leaves.iter().enumerate() {
        if report.excluded_leaves.contains(&li) {
            continue;
        }
        let analytic = grads
            .get(leaf_id)
            .ok_or_else(|| Error::contract("leaf missing from gradient map"))?
            .to_vec();
        for (c, &a) in analytic.iter().enumerate() {
            let original = point[li].values()[c];
            work[li].values_mut()[c] = original + h;
            let plus = eval(&work, li, c)?;
            work[li].values_mut()[c] = original - h;
            let minus = eval(&work, li, c)?;
            work[li].values_mut()[c] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if !err.is_finite() {
                return Err(Error::NonFinite { leaf: li, coordinate: c });
            }
            report.checked_coordinates += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err.max(report.max_relative_error);
                report.worst = Some((li, c));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let report = grad_check(
            |g, x| {
                let sq = g.square(x[0])?;
                g.sum(sq)
            },
            &[Tensor::scalar(3.0)],
            1e-6,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
        assert_eq!(report.checked_coordinates, 1);
    }

    #[test]
    fn stop_gradient_leaves_are_excluded_not_errors() {
        let report = grad_check(
            |g, x| {
                let s = g.stop_gradient(x[0])?;
                let p = g.mul(s, x[0])?;
                g.sum(p)
            },
            &[Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap()],
            1e-6,
        )
        .unwrap();
        assert_eq!(report.excluded_leaves, vec![0]);
        assert_eq!(report.checked_coordinates, 0);
    }

    #[test]
    fn non_finite_names_coordinate() {
        let err = grad_check(
            |g, x| {
                let l = g.log(x[0])?;
                g.sum(l)
            },
            &[Tensor::new(&[2], vec![1.0, 1e-7]).unwrap()],
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { leaf: 0, coordinate: 1 }));
    }

    #[test]
    fn rejects_bad_step() {
        let r = grad_check(|g, x| g.sum(x[0]), &[Tensor::scalar(1.0)], 0.0);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
