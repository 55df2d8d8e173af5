use crate::error::{Error, Result};

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Undefined("cosine similarity with a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity over aligned pairs.
pub fn mean_cosine_similarity<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("{} vectors paired with {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InsufficientData("no pairs to average".into()));
    }
    let total = a
        .iter()
        .zip(b)
        .map(|(x, y)| cosine_similarity(x.as_ref(), y.as_ref()))
        .sum::<Result<f64>>()?;
    Ok(total / a.len() as f64)
}
