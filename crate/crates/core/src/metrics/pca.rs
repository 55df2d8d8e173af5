use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Projection onto the top two principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub coords: Vec<[f64; 2]>,
    /// Covariance eigenvalues of the two directions, largest first.
    pub variances: [f64; 2],
    /// Unit loading vectors, each with its first nonzero entry positive.
    pub components: [Vec<f64>; 2],
}

pub fn pca2<R: AsRef<[f64]>>(vectors: &[R]) -> Result<Pca2> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("PCA needs 2 vectors, got {n}")));
    }
    let dim = vectors[0].as_ref().len();
    if let Some(v) = vectors.iter().find(|v| v.as_ref().len() != dim) {
        return Err(Error::dim(format!("vectors of width {dim} and {}", v.as_ref().len())));
    }
    if dim < 2 {
        return Err(Error::Degenerate(format!("{dim}-dimensional input has no 2-D projection")));
    }
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = DMatrix::from_fn(n, dim, |i, j| vectors[i].as_ref()[j] - mean[j]);
    let cov = (centred.transpose() * &centred) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lambda_max = eig.eigenvalues[order[0]];
    if lambda_max <= 0.0 {
        return Err(Error::Degenerate("all vectors coincide".into()));
    }

    let component = |k: usize| -> (Vec<f64>, f64, bool) {
        let col = order[k];
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        let first = v.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(0.0);
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let lambda = eig.eigenvalues[col].max(0.0);
        (v, lambda, lambda > 1e-12 * lambda_max)
    };
    let (c0, l0, _) = component(0);
    let (c1, l1, keep1) = component(1);
    let coords = (0..n)
        .map(|i| {
            let row = centred.row(i);
            let p0: f64 = row.iter().zip(&c0).map(|(x, y)| x * y).sum();
            let p1: f64 = if keep1 { row.iter().zip(&c1).map(|(x, y)| x * y).sum() } else { 0.0 };
            [p0, p1]
        })
        .collect();
    Ok(Pca2 {
        coords,
        variances: [l0, if keep1 { l1 } else { 0.0 }],
        components: [c0, c1],
    })
}
