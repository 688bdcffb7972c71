//! Character bigram language model with additive smoothing.
//!
//! Index 0 (the CTC blank, which never occurs in text) doubles as the
//! sentence boundary: it is the context of the first symbol and the
//! token that ends a sentence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOUNDARY: usize = 0;

/// Scores used by prefix beam search.
pub trait LanguageModel {
    /// `log p(token | prev)`; `prev = BOUNDARY` at sentence start.
    fn log_prob(&self, prev: usize, token: usize) -> f64;

    fn end_log_prob(&self, prev: usize) -> f64 {
        self.log_prob(prev, BOUNDARY)
    }

    /// Chain-rule log probability of a whole sentence, end included.
    fn sentence_log_prob(&self, tokens: &[usize]) -> f64 {
        let mut prev = BOUNDARY;
        let mut total = 0.0;
        for &t in tokens {
            total += self.log_prob(prev, t);
            prev = t;
        }
        total + self.end_log_prob(prev)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgramLm {
    pub order: usize,
    pub smoothing: f64,
    pub vocab_size: usize,
    /// `table[prev][token]` log probabilities.
    pub table: Vec<Vec<f64>>,
}

impl NgramLm {
    pub const DEFAULT_SMOOTHING: f64 = 0.1;

    pub fn train(sentences: &[Vec<usize>], vocab_size: usize, smoothing: f64) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Data("language model corpus is empty".into()));
        }
        if !(smoothing > 0.0) {
            return Err(Error::Config("lm smoothing must be positive".into()));
        }
        let mut counts = vec![vec![0.0; vocab_size]; vocab_size];
        for s in sentences {
            let mut prev = BOUNDARY;
            for &t in s {
                if t == BOUNDARY || t >= vocab_size {
                    return Err(Error::Data(format!("token {t} not in vocabulary")));
                }
                counts[prev][t] += 1.0;
                prev = t;
            }
            counts[prev][BOUNDARY] += 1.0;
        }
        let table = counts
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum::<f64>() + smoothing * vocab_size as f64;
                row.iter().map(|c| ((c + smoothing) / total).ln()).collect()
            })
            .collect();
        Ok(Self {
            order: 2,
            smoothing,
            vocab_size,
            table,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("language model: {e}")))
    }
}

impl LanguageModel for NgramLm {
    fn log_prob(&self, prev: usize, token: usize) -> f64 {
        self.table
            .get(prev)
            .and_then(|row| row.get(token))
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contexts_are_normalized() {
        let lm = NgramLm::train(&[vec![1, 2], vec![2, 2, 3]], 5, 0.1).unwrap();
        for row in &lm.table {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn trained_string_is_most_likely() {
        let lm = NgramLm::train(&[vec![1, 2]], 4, 0.1).unwrap();
        let best = lm.sentence_log_prob(&[1, 2]);
        for a in 1..4 {
            for b in 1..4 {
                if (a, b) != (1, 2) {
                    assert!(lm.sentence_log_prob(&[a, b]) < best);
                }
            }
        }
        assert!(lm.sentence_log_prob(&[3, 3, 3]).is_finite());
    }

    #[test]
    fn bad_corpus_rejected() {
        assert!(matches!(NgramLm::train(&[], 4, 0.1), Err(Error::Data(_))));
        assert!(matches!(NgramLm::train(&[vec![7]], 4, 0.1), Err(Error::Data(_))));
    }
}
