//! CTC training of the acoustic model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::asr::ctc::ctc_op;
use crate::asr::decode::greedy_decode;
use crate::asr::model::{AcousticModel, AsrConfig};
use crate::asr::score::corpus_wer;
use crate::asr::Vocabulary;
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::masknet::LossCurve;
use crate::optim::{AdamW, AdamWConfig, LrSchedule};
use crate::signal::WaveBuffer;

/// One utterance: log-mel features and its token sequence.
#[derive(Clone, Debug)]
pub struct AsrExample {
    pub mel: Tensor,
    pub tokens: Vec<usize>,
    pub transcript: String,
}

impl AsrExample {
    pub fn from_wave(cfg: &AsrConfig, vocab: &Vocabulary, wave: &WaveBuffer, transcript: &str) -> Result<Self> {
        Ok(Self {
            mel: crate::signal::log_mel_with(wave, &cfg.mel)?.data,
            tokens: vocab.encode(transcript)?,
            transcript: transcript.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsrTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub optimizer: AdamWConfig,
    pub model: AsrConfig,
    /// Standard deviation of Gaussian noise added to normalized features.
    pub feature_noise: f64,
}

impl Default for AsrTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            schedule: LrSchedule::WarmupExpDecay {
                peak: 1.5e-4,
                factor: 0.97,
            },
            optimizer: AdamWConfig::adam(),
            model: AsrConfig::default(),
            feature_noise: 0.0,
        }
    }
}

pub fn train_asr(data: &[AsrExample], cfg: &AsrTrainConfig, seed: u64) -> Result<(AcousticModel, LossCurve)> {
    if data.is_empty() {
        return Err(Error::Data("asr training set is empty".into()));
    }
    cfg.model.validate()?;
    let mut model = AcousticModel::new(cfg.model.clone(), seed);
    model.fit_normalization(&data.iter().map(|e| &e.mel).collect::<Vec<_>>());
    model.params.set_trainable(AcousticModel::is_weight);
    let mut opt = AdamW::new(cfg.optimizer.clone(), model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0061_7372);
    let batch = cfg.batch_size.max(1);
    let batches = data.len().div_ceil(batch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut used = 0usize;
        for (bi, chunk) in order.chunks(batch).enumerate() {
            model.params.zero_grads();
            let mut n = 0usize;
            for &i in chunk {
                let ex = &data[i];
                let mel = if cfg.feature_noise > 0.0 {
                    augment(&model, &ex.mel, cfg.feature_noise, &mut rng)
                } else {
                    ex.mel.clone()
                };
                let mut tape = Tape::new();
                let m = tape.constant(mel);
                let fwd = model.forward(&mut tape, m)?;
                let loss = match ctc_op(&mut tape, fwd.log_probs, &ex.tokens) {
                    Ok(l) => l,
                    Err(Error::InfeasibleTarget { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite ctc loss on example {i}"),
                    });
                }
                total += value;
                used += 1;
                n += 1;
                let grads = tape.backward(loss)?;
                model.params.accumulate(&fwd.bound, &grads);
            }
            if n == 0 {
                continue;
            }
            model.params.scale_grads(1.0 / n as f64);
            opt.step(&mut model.params, cfg.schedule.rate(epoch, bi, batches));
            if !model.params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite asr parameters".into(),
                });
            }
        }
        if used == 0 {
            return Err(Error::Data("no asr example has a feasible ctc target".into()));
        }
        curve.push(total / used as f64);
    }
    Ok((model, curve))
}

/// Adds noise in the normalized domain, i.e. scaled back by the band
/// standard deviation.
fn augment(model: &AcousticModel, mel: &Tensor, std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let scale = model.params.view(model.params.index_of(crate::asr::model::NORM_SCALE).expect("layout"));
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_shape_fn(mel.dim(), |(t, b)| mel[[t, b]] + normal.sample(rng) / scale[[0, b]])
}

/// Greedy-decoding WER of `model` on `data`.
pub fn greedy_wer(model: &AcousticModel, vocab: &Vocabulary, data: &[AsrExample]) -> Result<f64> {
    let hyps = data
        .iter()
        .map(|ex| Ok(greedy_decode(&model.log_posteriors(&ex.mel)?).text(vocab)))
        .collect::<Result<Vec<_>>>()?;
    corpus_wer(data.iter().zip(&hyps).map(|(e, h)| (e.transcript.as_str(), h.as_str())))
}
