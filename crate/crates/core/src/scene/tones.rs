//! Token audio: every vocabulary symbol is rendered as a short voiced unit
//! with its own pitch and formant pair, so a recognizer can learn the
//! mapping from sound to character at desk scale.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::asr::Vocabulary;
use crate::error::{Error, Result};
use crate::signal::{WaveBuffer, SAMPLE_RATE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToneConfig {
    pub unit_ms: f64,
    pub gap_ms: f64,
    pub lead_ms: f64,
    pub trail_ms: f64,
    /// Relative pitch jitter drawn once per rendered unit.
    pub pitch_jitter: f64,
    /// Level of the breathy noise component relative to the harmonics.
    pub breath: f64,
    pub level: f64,
}

impl Default for ToneConfig {
    fn default() -> Self {
        Self {
            unit_ms: 200.0,
            gap_ms: 50.0,
            lead_ms: 100.0,
            trail_ms: 100.0,
            pitch_jitter: 0.03,
            breath: 0.2,
            level: 0.1,
        }
    }
}

/// Acoustic identity of one token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timbre {
    pub f0: f64,
    pub formant1: f64,
    pub formant2: f64,
}

/// Deterministic timbre for token id `k >= 1`.
pub fn timbre(k: usize) -> Timbre {
    let i = (k - 1) as f64;
    Timbre {
        f0: 100.0 + 11.0 * ((k * 5) % 9) as f64,
        formant1: 350.0 + 330.0 * i,
        formant2: 1500.0 + 300.0 * i,
    }
}

fn ms_to_samples(ms: f64) -> usize {
    (ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
}

fn render_unit(t: Timbre, cfg: &ToneConfig, rng: &mut impl Rng) -> Vec<f64> {
    let n = ms_to_samples(cfg.unit_ms);
    let fs = SAMPLE_RATE as f64;
    let f0 = t.f0 * (1.0 + rng.gen_range(-cfg.pitch_jitter..=cfg.pitch_jitter));
    let vib_rate = rng.gen_range(4.0..7.0);
    let vib_depth = rng.gen_range(0.005..0.02);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let gain = rng.gen_range(0.6..1.0);
    let harmonics = ((7000.0 / f0) as usize).max(1);
    let amp: Vec<f64> = (1..=harmonics)
        .map(|h| {
            let hz = h as f64 * f0;
            (-0.5 * ((hz - t.formant1) / 180.0).powi(2)).exp()
                + 0.4 * (-0.5 * ((hz - t.formant2) / 300.0).powi(2)).exp()
                + 0.02 / h as f64
        })
        .collect();
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();

    // two-pole resonator at the first formant for the breath component
    let r = (-PI * 200.0 / fs).exp();
    let theta = 2.0 * PI * t.formant1 / fs;
    let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
    let white = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut y1, mut y2) = (0.0, 0.0);

    let attack = ms_to_samples(25.0) as f64;
    let release = ms_to_samples(40.0) as f64;
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let time = i as f64 / fs;
        let inst = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * time + vib_phase).sin());
        phase += 2.0 * PI * inst / fs;
        let mut v = 0.0;
        for (h, (&a, &p)) in amp.iter().zip(&phases).enumerate() {
            v += a * ((h + 1) as f64 * phase + p).sin();
        }
        let y = white.sample(rng) * (1.0 - r) + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        v += cfg.breath * 4.0 * y;
        let fi = i as f64;
        let env = if fi < attack {
            0.5 - 0.5 * (PI * fi / attack).cos()
        } else if fi > n as f64 - release {
            0.5 - 0.5 * (PI * (n as f64 - fi) / release).cos()
        } else {
            1.0
        };
        out.push(gain * env * v);
    }
    out
}

/// Renders `transcript` as concatenated token units separated by gaps, with
/// leading and trailing silence.
pub fn tone_lexicon_render(
    vocab: &Vocabulary,
    transcript: &str,
    cfg: &ToneConfig,
    rng: &mut impl Rng,
) -> Result<WaveBuffer> {
    let tokens = vocab.encode(transcript)?;
    let gap = ms_to_samples(cfg.gap_ms);
    let mut out = vec![0.0; ms_to_samples(cfg.lead_ms)];
    let mut units = Vec::new();
    for (i, &tok) in tokens.iter().enumerate() {
        if i > 0 {
            out.extend(std::iter::repeat_n(0.0, gap));
        }
        let u = render_unit(timbre(tok), cfg, rng);
        units.push((out.len(), u.len()));
        out.extend(u);
    }
    out.extend(std::iter::repeat_n(0.0, ms_to_samples(cfg.trail_ms)));
    let voiced: Vec<f64> = units
        .iter()
        .flat_map(|&(s, l)| out[s..s + l].iter().copied())
        .collect();
    if !voiced.is_empty() {
        let rms = (voiced.iter().map(|v| v * v).sum::<f64>() / voiced.len() as f64).sqrt();
        if rms > 0.0 {
            let k = cfg.level / rms;
            out.iter_mut().for_each(|v| *v *= k);
        }
    }
    Ok(WaveBuffer::mono(out))
}

/// Words spelled from the desk vocabulary.
pub const DESK_WORDS: &[&str] = &[
    "ab", "ad", "ah", "be", "bad", "bag", "bed", "cab", "dab", "fad", "fed", "gab", "had", "hag",
    "ace", "add", "beg", "egg", "bead", "each", "dead", "hedge", "gag", "cafe", "face", "head",
];

/// A transcript of `words` words drawn uniformly from `lexicon`.
pub fn sample_transcript(lexicon: &[&str], words: usize, rng: &mut impl Rng) -> String {
    (0..words)
        .map(|_| lexicon[rng.gen_range(0..lexicon.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn validate_lexicon(vocab: &Vocabulary, lexicon: &[&str]) -> Result<()> {
    for w in lexicon {
        vocab.encode(w).map_err(|e| Error::Config(format!("word {w:?}: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rustfft::{num_complex::Complex64, FftPlanner};

    fn centroid(x: &[f64]) -> f64 {
        let n = x.len().next_power_of_two();
        let mut buf: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (mut num, mut den) = (0.0, 0.0);
        for (k, c) in buf.iter().take(n / 2 + 1).enumerate() {
            let hz = k as f64 * SAMPLE_RATE as f64 / n as f64;
            num += hz * c.norm_sqr();
            den += c.norm_sqr();
        }
        num / den
    }

    #[test]
    fn durations_follow_configuration() {
        let v = Vocabulary::desk();
        let cfg = ToneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let empty = tone_lexicon_render(&v, "", &cfg, &mut rng).unwrap();
        assert_eq!(empty.len(), 3200);
        assert!(empty.samples.iter().all(|&s| s == 0.0));
        let one = tone_lexicon_render(&v, "a", &cfg, &mut rng).unwrap();
        assert_eq!(one.len(), 3200 + 3200);
        let two = tone_lexicon_render(&v, "ab", &cfg, &mut rng).unwrap();
        assert_eq!(two.len(), 3200 + 2 * 3200 + 800);
        assert!(matches!(
            tone_lexicon_render(&v, "z", &cfg, &mut rng),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn distinct_tokens_have_distinct_centroids() {
        let v = Vocabulary::desk();
        let cfg = ToneConfig {
            lead_ms: 0.0,
            trail_ms: 0.0,
            ..ToneConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cents: Vec<f64> = v
            .symbols()
            .map(|k| {
                let text = v.char_of(k).unwrap().to_string();
                let w = tone_lexicon_render(&v, &text, &cfg, &mut rng).unwrap();
                centroid(w.channel(0).as_slice().unwrap())
            })
            .collect();
        for i in 0..cents.len() {
            for j in 0..i {
                assert!(
                    (cents[i] - cents[j]).abs() > 100.0,
                    "tokens {i},{j}: {} vs {}",
                    cents[i],
                    cents[j]
                );
            }
        }
    }

    #[test]
    fn lexicon_fits_desk_vocabulary() {
        validate_lexicon(&Vocabulary::desk(), DESK_WORDS).unwrap();
    }
}
