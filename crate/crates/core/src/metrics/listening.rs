use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MosSummary {
    pub mean: f64,
    /// Half-width of the two-sided 95% Student-t interval.
    pub ci95: f64,
    pub n: usize,
}

pub fn mos_summary(ratings: &[f64]) -> Result<MosSummary> {
    let n = ratings.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("a confidence interval needs 2 ratings, got {n}")));
    }
    if let Some(bad) = ratings.iter().find(|r| !r.is_finite()) {
        return Err(Error::Validation(format!("rating {bad} is not finite")));
    }
    let mean = ratings.iter().sum::<f64>() / n as f64;
    let var = ratings.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Validation(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(MosSummary {
        mean,
        ci95: t * var.sqrt() / (n as f64).sqrt(),
        n,
    })
}

/// One rating per non-blank line.
pub fn read_ratings<R: BufRead>(r: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        out.push(s.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("`{s}` is not a number"),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BwsTrial {
    pub shown: Vec<String>,
    pub best: String,
    pub worst: String,
}

impl BwsTrial {
    pub fn validate(&self) -> Result<()> {
        let distinct: BTreeSet<&String> = self.shown.iter().collect();
        if distinct.len() < 2 || distinct.len() != self.shown.len() {
            return Err(Error::Validation(format!(
                "a trial must show at least 2 distinct items, got {:?}",
                self.shown
            )));
        }
        if self.best == self.worst {
            return Err(Error::Validation(format!("`{}` is both best and worst", self.best)));
        }
        for pick in [&self.best, &self.worst] {
            if !distinct.contains(pick) {
                return Err(Error::Validation(format!("`{pick}` was picked but not shown")));
            }
        }
        Ok(())
    }
}

pub fn read_bws_trials<R: BufRead>(r: R) -> Result<Vec<BwsTrial>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trial: BwsTrial = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(trial);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BwsTally {
    pub best: usize,
    pub worst: usize,
    pub shown: usize,
}

impl BwsTally {
    /// `(best - worst) / shown`.
    pub fn score(&self) -> f64 {
        (self.best as f64 - self.worst as f64) / self.shown as f64
    }

    /// Share of appearances in which the item was picked best.
    pub fn best_share(&self) -> f64 {
        self.best as f64 / self.shown as f64
    }
}

pub fn bws_tally(trials: &[BwsTrial]) -> Result<BTreeMap<String, BwsTally>> {
    let mut out: BTreeMap<String, BwsTally> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        t.validate().map_err(|e| Error::Validation(format!("trial {i}: {e}")))?;
        for item in &t.shown {
            out.entry(item.clone()).or_default().shown += 1;
        }
        out.get_mut(&t.best).expect("validated").best += 1;
        out.get_mut(&t.worst).expect("validated").worst += 1;
    }
    Ok(out)
}

pub fn bws_scores(trials: &[BwsTrial]) -> Result<BTreeMap<String, f64>> {
    Ok(bws_tally(trials)?.into_iter().map(|(k, t)| (k, t.score())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(shown: &[&str], best: &str, worst: &str) -> BwsTrial {
        BwsTrial {
            shown: shown.iter().map(|s| s.to_string()).collect(),
            best: best.into(),
            worst: worst.into(),
        }
    }

    #[test]
    fn mos_cases() {
        let s = mos_summary(&[4.0; 4]).unwrap();
        assert_eq!((s.mean, s.ci95), (4.0, 0.0));
        let s = mos_summary(&[3.0, 5.0]).unwrap();
        assert_eq!(s.mean, 4.0);
        assert!((s.ci95 - 12.7062).abs() < 1e-3, "{}", s.ci95);
        assert_eq!(mos_summary(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap().mean, 3.0);
        assert!(matches!(mos_summary(&[3.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn bws_cases() {
        let t = vec![trial(&["A", "B"], "A", "B"); 2];
        let s = bws_scores(&t).unwrap();
        assert_eq!((s["A"], s["B"]), (1.0, -1.0));

        let mut fixture = Vec::new();
        for k in 0..8 {
            let (best, worst) = match k {
                0..=2 => ("X", "Y"),
                3 => ("Y", "X"),
                _ => ("Z", "Y"),
            };
            fixture.push(trial(&["X", "Y", "Z"], best, worst));
        }
        let tally = bws_tally(&fixture).unwrap();
        assert_eq!(tally["X"], BwsTally { best: 3, worst: 1, shown: 8 });
        assert_eq!(tally["X"].score(), 0.25);
        assert_eq!(tally["Z"].score(), 0.5);

        assert!(matches!(bws_scores(&[trial(&["A", "B"], "C", "B")]), Err(Error::Validation(_))));
        assert!(matches!(bws_scores(&[trial(&["A", "B"], "A", "A")]), Err(Error::Validation(_))));
    }

    #[test]
    fn readers() {
        assert_eq!(read_ratings("4\n\n3.5\n".as_bytes()).unwrap(), vec![4.0, 3.5]);
        assert!(matches!(read_ratings("4\nfive\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
        let t = read_bws_trials(r#"{"shown":["a","b"],"best":"a","worst":"b"}"#.as_bytes()).unwrap();
        assert_eq!(t, vec![trial(&["a", "b"], "a", "b")]);
    }
}
