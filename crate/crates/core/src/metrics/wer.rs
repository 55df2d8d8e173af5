use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WerResult {
    pub wer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

/// Word error rate under a unit-cost Levenshtein alignment. Among equally
/// short alignments the backtrace takes substitutions first, then deletions.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<WerResult> {
    if reference.is_empty() {
        return Err(Error::contract("word error rate needs a non-empty reference"));
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for (j, v) in d[..w].iter_mut().enumerate() {
        *v = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            d[i * w + j] = (d[(i - 1) * w + j - 1] + sub)
                .min(d[(i - 1) * w + j] + 1)
                .min(d[i * w + j - 1] + 1);
        }
    }
    let (mut s, mut del, mut ins) = (0, 0, 0);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                s += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            del += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    Ok(WerResult {
        wer: (s + del + ins) as f64 / n as f64,
        substitutions: s,
        deletions: del,
        insertions: ins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn cases() {
        assert_eq!(wer(&toks("a b c"), &toks("a b c")).unwrap().wer, 0.0);
        let r = wer(&toks("a b c d"), &toks("a x c")).unwrap();
        assert_eq!((r.wer, r.substitutions, r.deletions, r.insertions), (0.5, 1, 1, 0));
        let r = wer(&toks("a b c"), &[]).unwrap();
        assert_eq!((r.wer, r.deletions), (1.0, 3));
        let r = wer(&toks("a"), &toks("b c")).unwrap();
        assert_eq!((r.substitutions, r.insertions), (1, 1));
        assert!(matches!(wer::<&str>(&[], &["a"]), Err(Error::Contract(_))));
    }
}
