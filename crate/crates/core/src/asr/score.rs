//! Word error rate and the utterance confidence score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Substitutions + deletions + insertions between two word lists.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Word error rate in percent.
pub fn wer(reference: &str, hypothesis: &str) -> Result<f64> {
    let r = words(reference);
    if r.is_empty() {
        return Err(Error::invalid("wer needs a non-empty reference"));
    }
    Ok(100.0 * edit_distance(&r, &words(hypothesis)) as f64 / r.len() as f64)
}

/// Pooled word error rate over many utterances: total errors over total
/// reference words.
pub fn corpus_wer<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<f64> {
    let (mut errors, mut total) = (0usize, 0usize);
    for (r, h) in pairs {
        let rw = words(r);
        if rw.is_empty() {
            return Err(Error::invalid("wer needs a non-empty reference"));
        }
        errors += edit_distance(&rw, &words(h));
        total += rw.len();
    }
    if total == 0 {
        return Err(Error::invalid("wer over an empty set"));
    }
    Ok(100.0 * errors as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ConfidenceWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 50.0,
            gamma: 1000.0,
        }
    }
}

/// `c = alpha log p_ASR + beta log p_LM + gamma |x|` with `|x|` in seconds.
pub fn confidence(log_p_asr: f64, log_p_lm: f64, seconds: f64, w: &ConfidenceWeights) -> f64 {
    w.alpha * log_p_asr + w.beta * log_p_lm + w.gamma * seconds
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wer_examples() {
        assert!((wer("a b c", "a x c").unwrap() - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(wer("a b c", "a b c").unwrap(), 0.0);
        assert_eq!(wer("a b", "a b c d").unwrap(), 100.0);
        assert!(matches!(wer("", "a"), Err(Error::InvalidInput(_))));
        assert!(matches!(wer("  ", "a"), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn confidence_examples() {
        let w = ConfidenceWeights::default();
        assert_eq!(confidence(-35.0, -2.0, 1.2, &w), 1065.0);
        let zero = ConfidenceWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        assert_eq!(confidence(-35.0, -2.0, 1.2, &zero), 0.0);
    }

    /// Minimum over all monotone alignments, by recursion with memo.
    fn oracle(r: &[u8], h: &[u8], memo: &mut std::collections::HashMap<(usize, usize), usize>) -> usize {
        if r.is_empty() {
            return h.len();
        }
        if h.is_empty() {
            return r.len();
        }
        if let Some(&v) = memo.get(&(r.len(), h.len())) {
            return v;
        }
        let v = (oracle(&r[1..], &h[1..], memo) + usize::from(r[0] != h[0]))
            .min(oracle(&r[1..], h, memo) + 1)
            .min(oracle(r, &h[1..], memo) + 1);
        memo.insert((r.len(), h.len()), v);
        v
    }

    proptest! {
        #[test]
        fn edit_distance_matches_recursive_oracle(
            r in proptest::collection::vec(0u8..4, 0..8),
            h in proptest::collection::vec(0u8..4, 0..8),
        ) {
            let mut memo = std::collections::HashMap::new();
            prop_assert_eq!(edit_distance(&r, &h), oracle(&r, &h, &mut memo));
            prop_assert_eq!(edit_distance(&r, &h), edit_distance(&h, &r));
        }
    }
}
