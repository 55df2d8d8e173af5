use std::f64::consts::LN_10;

use crate::error::{Error, Result};

/// A minimum-cost warping path and its summed frame distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub path: Vec<(usize, usize)>,
    pub cost: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_frames<R: AsRef<[f64]>>(a: &[R], b: &[R]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("alignment needs two non-empty sequences"));
    }
    let dim = a[0].as_ref().len();
    if let Some(bad) = a.iter().chain(b).map(|f| f.as_ref().len()).find(|&d| d != dim) {
        return Err(Error::dim(format!("frames of width {dim} and {bad}")));
    }
    Ok(dim)
}

/// Dynamic time warping under squared Euclidean frame distance with steps
/// (1,0), (0,1) and (1,1). On equal cost the backtrace prefers the diagonal.
pub fn dtw_align<R: AsRef<[f64]>>(a: &[R], b: &[R]) -> Result<Alignment> {
    check_frames(a, b)?;
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = squared_distance(a[i].as_ref(), b[j].as_ref());
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = best + d;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(Alignment {
        path,
        cost: acc[n * m - 1],
    })
}

/// Mel cepstral distortion in dB, averaged over the DTW path. With
/// `skip_c0` the energy coefficient is ignored for both alignment and distance.
pub fn mcd<R: AsRef<[f64]>>(reference: &[R], synthesized: &[R], skip_c0: bool) -> Result<f64> {
    let dim = check_frames(reference, synthesized)?;
    let start = usize::from(skip_c0);
    if dim <= start {
        return Err(Error::dim(format!("{dim} coefficients leave nothing to compare")));
    }
    let r: Vec<&[f64]> = reference.iter().map(|f| &f.as_ref()[start..]).collect();
    let s: Vec<&[f64]> = synthesized.iter().map(|f| &f.as_ref()[start..]).collect();
    let alignment = dtw_align(&r, &s)?;
    let k = 10.0 / LN_10;
    let total: f64 = alignment
        .path
        .iter()
        .map(|&(i, j)| k * (2.0 * squared_distance(r[i], s[j])).sqrt())
        .sum();
    Ok(total / alignment.path.len() as f64)
}
