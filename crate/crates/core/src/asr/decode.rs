//! Best-path and prefix beam search decoding of CTC posteriors.

use serde::{Deserialize, Serialize};

use crate::asr::ctc::{ctc_loss, log_add};
use crate::asr::lm::LanguageModel;
use crate::asr::{Vocabulary, BLANK};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub tokens: Vec<usize>,
    /// `log p_ASR(y | x)` summed over alignments.
    pub log_p_asr: f64,
    /// `log p_LM(y)`, zero when decoded without a language model.
    pub log_p_lm: f64,
}

impl Transcript {
    pub fn text(&self, vocab: &Vocabulary) -> String {
        vocab.decode(&self.tokens)
    }
}

fn collapse(path: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

pub fn greedy_decode(log_probs: &Tensor) -> Transcript {
    let path = log_probs.rows().into_iter().map(|row| {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
            .0
    });
    let tokens = collapse(path);
    let log_p_asr = ctc_loss(log_probs, &tokens).map(|r| -r.loss).unwrap_or(f64::NEG_INFINITY);
    Transcript {
        tokens,
        log_p_asr,
        log_p_lm: 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub beam: usize,
    /// Language-model weight in the search score.
    pub lm_weight: f64,
    /// Per-token insertion bonus in the search score.
    pub length_bonus: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 8,
            lm_weight: 0.5,
            length_bonus: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
struct Hyp {
    prefix: Vec<usize>,
    blank: f64,
    non_blank: f64,
    lm: f64,
}

impl Hyp {
    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

/// Prefix beam search with shallow LM fusion.
pub fn beam_decode(log_probs: &Tensor, lm: Option<&dyn LanguageModel>, cfg: &BeamConfig) -> Result<Transcript> {
    if cfg.beam == 0 {
        return Err(Error::invalid("beam must be >= 1"));
    }
    let ninf = f64::NEG_INFINITY;
    let lm = lm.filter(|_| cfg.lm_weight != 0.0);
    let lm_step = |prev: usize, k: usize| lm.map_or(0.0, |m| m.log_prob(prev, k));
    let score = |h: &Hyp, end: bool| -> f64 {
        let mut lm_total = h.lm;
        if end {
            if let Some(m) = lm {
                lm_total += m.end_log_prob(h.prefix.last().copied().unwrap_or(0));
            }
        }
        let lm_term = if lm.is_some() { cfg.lm_weight * lm_total } else { 0.0 };
        h.total() + lm_term + cfg.length_bonus * h.prefix.len() as f64
    };
    let mut beams = vec![Hyp {
        prefix: Vec::new(),
        blank: 0.0,
        non_blank: ninf,
        lm: 0.0,
    }];
    let vocab = log_probs.ncols();
    for row in log_probs.rows() {
        let mut next: Vec<Hyp> = Vec::new();
        let find = |next: &mut Vec<Hyp>, prefix: &[usize], lm: f64| -> usize {
            match next.iter().position(|h| h.prefix == prefix) {
                Some(i) => i,
                None => {
                    next.push(Hyp {
                        prefix: prefix.to_vec(),
                        blank: ninf,
                        non_blank: ninf,
                        lm,
                    });
                    next.len() - 1
                }
            }
        };
        for h in &beams {
            let total = h.total();
            let i = find(&mut next, &h.prefix, h.lm);
            next[i].blank = log_add(next[i].blank, total + row[BLANK]);
            let last = h.prefix.last().copied();
            for k in 1..vocab {
                let p = row[k];
                let step = lm_step(last.unwrap_or(0), k);
                if lm.is_some() && step == ninf {
                    continue;
                }
                let mut ext = h.prefix.clone();
                ext.push(k);
                let j = find(&mut next, &ext, h.lm + step);
                if last == Some(k) {
                    next[j].non_blank = log_add(next[j].non_blank, h.blank + p);
                    let i = find(&mut next, &h.prefix, h.lm);
                    next[i].non_blank = log_add(next[i].non_blank, h.non_blank + p);
                } else {
                    next[j].non_blank = log_add(next[j].non_blank, total + p);
                }
            }
        }
        next.retain(|h| h.total() > ninf);
        next.sort_by(|a, b| score(b, false).total_cmp(&score(a, false)).then_with(|| a.prefix.cmp(&b.prefix)));
        next.truncate(cfg.beam);
        beams = next;
    }
    beams.sort_by(|a, b| score(b, true).total_cmp(&score(a, true)).then_with(|| a.prefix.cmp(&b.prefix)));
    let best = beams.into_iter().next().ok_or_else(|| Error::invalid("no hypothesis survived"))?;
    let log_p_lm = lm.map_or(0.0, |m| m.sentence_log_prob(&best.prefix));
    Ok(Transcript {
        log_p_asr: best.total(),
        log_p_lm,
        tokens: best.prefix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asr::lm::NgramLm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(rows: &[[f64; 3]]) -> Tensor {
        let mut t = Tensor::zeros((rows.len(), 3));
        for (i, r) in rows.iter().enumerate() {
            for k in 0..3 {
                t[[i, k]] = r[k].ln();
            }
        }
        t
    }

    #[test]
    fn greedy_collapse_rules() {
        let hi = 0.8;
        let lo = 0.1;
        let a = [lo, hi, lo];
        let b = [lo, lo, hi];
        let blank = [hi, lo, lo];
        assert_eq!(greedy_decode(&table(&[a, a, blank, b])).tokens, vec![1, 2]);
        assert!(greedy_decode(&table(&[blank, blank])).tokens.is_empty());
        assert_eq!(greedy_decode(&table(&[a, blank, a])).tokens, vec![1, 1]);
    }

    #[test]
    fn beam_one_without_lm_matches_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = BeamConfig {
            beam: 1,
            lm_weight: 0.0,
            length_bonus: 0.0,
        };
        for _ in 0..50 {
            let rows: Vec<[f64; 3]> = (0..6)
                .map(|_| {
                    let mut r = [0.02, 0.02, 0.02];
                    r[rng.gen_range(0..3)] = 0.96;
                    r
                })
                .collect();
            let t = table(&rows);
            assert_eq!(beam_decode(&t, None, &cfg).unwrap().tokens, greedy_decode(&t).tokens);
        }
    }

    #[test]
    fn peaked_posteriors_recover_path_probability() {
        let p = 0.995;
        let q = (1.0 - p) / 2.0;
        let a = [q, p, q];
        let b = [q, q, p];
        let blank = [p, q, q];
        let rows = [a, blank, b, b, blank, a];
        let t = table(&rows);
        let out = beam_decode(&t, None, &BeamConfig::default()).unwrap();
        assert_eq!(out.tokens, vec![1, 2, 1]);
        let path: f64 = (0..6).map(|i| rows[i].iter().cloned().fold(0.0, f64::max).ln()).sum();
        assert!((out.log_p_asr - path).abs() < 0.05);
    }

    struct NoB;

    impl LanguageModel for NoB {
        fn log_prob(&self, _prev: usize, token: usize) -> f64 {
            if token == 2 {
                f64::NEG_INFINITY
            } else {
                -0.5
            }
        }
    }

    #[test]
    fn forbidden_token_never_emitted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = Tensor::from_shape_fn((8, 3), |_| rng.gen_range(0.0f64..1.0).ln());
        let out = beam_decode(&t, Some(&NoB), &BeamConfig::default()).unwrap();
        assert!(!out.tokens.contains(&2));
        assert!(out.log_p_lm.is_finite());
    }

    #[test]
    fn lm_scores_are_reported_unweighted() {
        let lm = NgramLm::train(&[vec![1, 2]], 3, 0.1).unwrap();
        let p = 0.99;
        let q = 0.005;
        let t = table(&[[q, p, q], [p, q, q], [q, q, p]]);
        let out = beam_decode(&t, Some(&lm), &BeamConfig::default()).unwrap();
        assert_eq!(out.tokens, vec![1, 2]);
        assert!((out.log_p_lm - lm.sentence_log_prob(&[1, 2])).abs() < 1e-12);
    }

    #[test]
    fn zero_beam_rejected() {
        let t = Tensor::zeros((2, 3));
        let cfg = BeamConfig {
            beam: 0,
            ..BeamConfig::default()
        };
        assert!(beam_decode(&t, None, &cfg).is_err());
    }
}
