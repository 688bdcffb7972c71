//! Run-time joint adaptation of the mask estimator and the recognizer's
//! convolutional front end from confidence-selected pseudo labels.
//!
//! The objective for a batch of clean utterances and pseudo-labelled
//! recordings is
//!
//! ```text
//! L = mean CTC(y, t) + lambda |omega - omega_init|^2
//! ```
//!
//! where pseudo examples are scored through the whole enhancement chain
//! (features, mask, covariances, MVDR, direction-switched filtering,
//! resynthesis, log-mel) and `omega` are the mask-estimator weights.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asr::{
    beam_decode, confidence, corpus_wer, ctc_op, AcousticModel, AsrExample, BeamConfig, ConfidenceWeights, NgramLm,
    Vocabulary,
};
use crate::autodiff::Tape;
use crate::beamformer::{accumulate_scms, apply_hma, beamform_on_tape, mvdr_filters, BeamMode, EnhanceConfig};
use crate::diffsp::log_mel_op;
use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::masknet::{front_end, MaskEstimator};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParameterVector;
use crate::scene::{DirectionTrace, SceneExample, SteeringField};
use crate::signal::{istft_with, ComplexSpectrogram, LogMel, StftPlan, WaveBuffer};

/// An observed multichannel utterance with its head-direction trace.
#[derive(Clone, Debug)]
pub struct Recording {
    pub id: String,
    pub mixture: ComplexSpectrogram,
    pub trace: DirectionTrace,
    /// Reference text, used for dev WER and the oracle-transcript mode.
    pub transcript: Option<String>,
}

impl Recording {
    pub fn from_scene(scene: &SceneExample) -> Self {
        Self {
            id: scene.id.clone(),
            mixture: scene.mixture.clone(),
            trace: scene.trace.clone(),
            transcript: Some(scene.transcript.clone()),
        }
    }
}

/// A recording after the parameter-free part of the chain (WPE and
/// feature extraction), which adaptation never changes.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dereverberated: Arc<ComplexSpectrogram>,
    pub features: FeatureTensor,
    pub trace: DirectionTrace,
    pub seconds: f64,
}

pub fn prepare(rec: &Recording, field: &SteeringField, cfg: &EnhanceConfig) -> Result<Prepared> {
    let (y, features) = front_end(&rec.mixture, field, &rec.trace, cfg.reference, cfg.wpe.as_ref())?;
    let trace = match cfg.mode {
        BeamMode::TimeInvariant => rec.trace.collapsed(),
        _ => rec.trace.clone(),
    };
    Ok(Prepared {
        seconds: y.signal_len as f64 / crate::signal::SAMPLE_RATE as f64,
        dereverberated: Arc::new(y),
        features,
        trace,
    })
}

/// Enhanced waveform of a prepared recording with the current mask net.
pub fn enhance_prepared(mask: &MaskEstimator, p: &Prepared, cfg: &EnhanceConfig) -> Result<WaveBuffer> {
    let y = &p.dereverberated;
    let spectrum = if cfg.mode == BeamMode::Passthrough {
        y.select_channel(cfg.reference)
    } else {
        let z = mask.estimate(&p.features)?;
        let scms = accumulate_scms(y, &z, &p.trace)?;
        let filters = mvdr_filters(&scms, cfg.reference, cfg.loading)?;
        apply_hma(y, &filters, &p.trace)?
    };
    istft_with(&StftPlan::new(y.window, y.hop)?, &spectrum)
}

/// Acoustic model, language model and decoding settings.
#[derive(Clone, Debug)]
pub struct Recognizer {
    pub asr: AcousticModel,
    pub lm: NgramLm,
    pub vocab: Vocabulary,
    pub beam: BeamConfig,
    pub weights: ConfidenceWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub text: String,
    pub confidence: f64,
}

impl Recognizer {
    pub fn recognize(&self, wave: &WaveBuffer) -> Result<Hypothesis> {
        let lp = self.asr.log_posteriors_wave(wave)?;
        let t = beam_decode(&lp, Some(&self.lm), &self.beam)?;
        Ok(Hypothesis {
            text: t.text(&self.vocab),
            confidence: confidence(t.log_p_asr, t.log_p_lm, wave.duration_secs(), &self.weights),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoExample {
    /// Index into the recordings passed to [`build_pseudo_dataset`].
    pub recording: usize,
    pub transcript: String,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Selection {
    Threshold(f64),
    TopK(usize),
    /// The best `fraction` of all recordings, rounded to the nearest count.
    TopFraction(f64),
}

/// Sorts by descending confidence (ties by recording index) and keeps
/// the selected head.
pub fn select(mut scored: Vec<PseudoExample>, rule: Selection) -> Vec<PseudoExample> {
    scored.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.recording.cmp(&b.recording)));
    let n = scored.len();
    match rule {
        Selection::Threshold(theta) => scored.retain(|p| p.confidence >= theta),
        Selection::TopK(k) => scored.truncate(k),
        Selection::TopFraction(f) => scored.truncate(((f.clamp(0.0, 1.0) * n as f64).round()) as usize),
    }
    scored
}

/// Enhance, decode and score every recording, then apply `rule`.
pub fn build_pseudo_dataset(
    recordings: &[Recording],
    prepared: &[Prepared],
    mask: &MaskEstimator,
    recognizer: &Recognizer,
    chain: &EnhanceConfig,
    rule: Selection,
    oracle_transcripts: bool,
) -> Result<Vec<PseudoExample>> {
    let mut scored = Vec::with_capacity(prepared.len());
    for (i, p) in prepared.iter().enumerate() {
        let wave = enhance_prepared(mask, p, chain)?;
        let hyp = recognizer.recognize(&wave)?;
        let transcript = if oracle_transcripts {
            recordings[i]
                .transcript
                .clone()
                .ok_or_else(|| Error::Data(format!("recording {} has no reference transcript", recordings[i].id)))?
        } else {
            hyp.text
        };
        scored.push(PseudoExample {
            recording: i,
            transcript,
            confidence: hyp.confidence,
        });
    }
    Ok(select(scored, rule))
}

/// Pooled WER of the enhanced-and-decoded recordings that carry a
/// reference transcript.
pub fn dev_wer(
    recordings: &[Recording],
    prepared: &[Prepared],
    mask: &MaskEstimator,
    recognizer: &Recognizer,
    chain: &EnhanceConfig,
) -> Result<Option<f64>> {
    let mut pairs = Vec::new();
    for (r, p) in recordings.iter().zip(prepared) {
        if let Some(reference) = &r.transcript {
            let hyp = recognizer.recognize(&enhance_prepared(mask, p, chain)?)?;
            pairs.push((reference.clone(), hyp.text));
        }
    }
    if pairs.is_empty() {
        return Ok(None);
    }
    corpus_wer(pairs.iter().map(|(a, b)| (a.as_str(), b.as_str()))).map(Some)
}

/// A pseudo-labelled example ready for the differentiable chain.
pub struct PseudoItem<'a> {
    pub prepared: &'a Prepared,
    pub tokens: &'a [usize],
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    /// Mean CTC loss over the examples that were used.
    pub ctc: f64,
    pub regularizer: f64,
    pub used: usize,
    /// Examples dropped because their target was infeasible.
    pub skipped: usize,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.ctc + self.regularizer
    }
}

/// Mean CTC loss of a mixed batch; gradients of the mean are added to
/// both parameter stores.
pub fn ctc_gradients(
    clean: &[&AsrExample],
    pseudo: &[PseudoItem<'_>],
    mask: &mut MaskEstimator,
    asr: &mut AcousticModel,
    chain: &EnhanceConfig,
) -> Result<LossParts> {
    let mel = Arc::new(LogMel::new(asr.cfg.mel.clone())?);
    let mut losses = Vec::new();
    let mut skipped = 0;
    // first pass: values and per-example grads, normalized afterwards
    let mut mask_grads = vec![0.0; mask.params.len()];
    let mut asr_grads = vec![0.0; asr.params.len()];
    let mut run = |tape: &mut Tape,
                   loss: Result<crate::autodiff::Var>,
                   mb: Option<&crate::params::Bound>,
                   ab: &crate::params::Bound,
                   mask: &mut MaskEstimator,
                   asr: &mut AcousticModel|
     -> Result<()> {
        let loss = match loss {
            Ok(l) => l,
            Err(Error::InfeasibleTarget { .. }) => {
                skipped += 1;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let grads = tape.backward(loss)?;
        losses.push(tape.scalar(loss));
        asr.params.zero_grads();
        asr.params.accumulate(ab, &grads);
        for (g, v) in asr_grads.iter_mut().zip(asr.params.grads()) {
            *g += v;
        }
        if let Some(mb) = mb {
            mask.params.zero_grads();
            mask.params.accumulate(mb, &grads);
            for (g, v) in mask_grads.iter_mut().zip(mask.params.grads()) {
                *g += v;
            }
        }
        Ok(())
    };
    for ex in clean {
        let mut tape = Tape::new();
        let m = tape.constant(ex.mel.clone());
        let fwd = asr.forward(&mut tape, m)?;
        let loss = ctc_op(&mut tape, fwd.log_probs, &ex.tokens);
        run(&mut tape, loss, None, &fwd.bound, mask, asr)?;
    }
    for item in pseudo {
        let p = item.prepared;
        let y = p.dereverberated.clone();
        let mut tape = Tape::new();
        let mf = mask.forward(&mut tape, &p.features, None)?;
        let plan = Arc::new(StftPlan::new(y.window, y.hop)?);
        let wave = beamform_on_tape(&mut tape, mf.z, y, &p.trace, chain.reference, chain.loading, plan)?;
        let feats = log_mel_op(&mut tape, wave, mel.clone())?;
        let af = asr.forward(&mut tape, feats)?;
        let loss = ctc_op(&mut tape, af.log_probs, item.tokens);
        run(&mut tape, loss, Some(&mf.bound), &af.bound, mask, asr)?;
    }
    let used = losses.len();
    let k = 1.0 / used.max(1) as f64;
    mask.params.zero_grads();
    for (g, v) in mask.params.grads_mut().iter_mut().zip(&mask_grads) {
        *g = v * k;
    }
    asr.params.zero_grads();
    for (g, v) in asr.params.grads_mut().iter_mut().zip(&asr_grads) {
        *g = v * k;
    }
    Ok(LossParts {
        ctc: losses.iter().sum::<f64>() * k,
        regularizer: 0.0,
        used,
        skipped,
    })
}

fn is_anchored(name: &str) -> bool {
    MaskEstimator::is_weight(name)
}

/// `|omega - omega_init|^2` over the mask-estimator weights.
pub fn anchor_distance(mask: &ParameterVector, init: &ParameterVector) -> f64 {
    mask.squared_distance(init, |s| is_anchored(&s.name))
}

/// The full objective with gradients: CTC part from [`ctc_gradients`]
/// plus `lambda |omega - omega_init|^2` and its gradient on the mask
/// weights.
pub fn adaptation_loss(
    clean: &[&AsrExample],
    pseudo: &[PseudoItem<'_>],
    mask: &mut MaskEstimator,
    mask_init: &ParameterVector,
    asr: &mut AcousticModel,
    lambda: f64,
    chain: &EnhanceConfig,
) -> Result<LossParts> {
    let mut parts = ctc_gradients(clean, pseudo, mask, asr, chain)?;
    parts.regularizer = lambda * anchor_distance(&mask.params, mask_init);
    let layout = mask.params.layout().to_vec();
    let values = mask.params.values().to_vec();
    let grads = mask.params.grads_mut();
    for s in layout.iter().filter(|s| is_anchored(&s.name)) {
        for i in s.range() {
            grads[i] += 2.0 * lambda * (values[i] - mask_init.values()[i]);
        }
    }
    Ok(parts)
}

/// Exact proximal step for `lambda |omega - omega_init|^2` after a
/// gradient step of size `lr` on the rest of the objective.
fn pull_to_anchor(mask: &mut ParameterVector, init: &ParameterVector, lambda: f64, lr: f64) {
    let shrink = 1.0 / (1.0 + 2.0 * lr * lambda);
    let layout = mask.layout().to_vec();
    let trainable = mask.trainable_mask();
    let values = mask.values_mut();
    for s in layout.iter().filter(|s| is_anchored(&s.name)) {
        for i in s.range() {
            if trainable[i] {
                values[i] = init.values()[i] + (values[i] - init.values()[i]) * shrink;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub selection: Selection,
    pub lambda: f64,
    pub epochs: usize,
    pub refresh_every: usize,
    pub clean_per_batch: usize,
    pub pseudo_per_batch: usize,
    pub learning_rate: f64,
    pub optimizer: AdamWConfig,
    pub train_mask: bool,
    pub train_asr_conv: bool,
    /// Use reference transcripts instead of decoded ones.
    pub oracle_transcripts: bool,
    /// Evaluate dev WER after every epoch.
    pub track_dev_wer: bool,
    pub chain: EnhanceConfig,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            selection: Selection::TopFraction(0.5),
            lambda: 5e-4,
            epochs: 20,
            refresh_every: 5,
            clean_per_batch: 8,
            pseudo_per_batch: 8,
            learning_rate: 5e-4,
            optimizer: AdamWConfig::adam(),
            train_mask: true,
            train_asr_conv: true,
            oracle_transcripts: false,
            track_dev_wer: true,
            chain: EnhanceConfig::default(),
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clean_per_batch == 0 || self.pseudo_per_batch == 0 || self.refresh_every == 0 {
            return Err(Error::Config("adaptation batch counts and refresh interval must be >= 1".into()));
        }
        if !(self.lambda >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("adaptation needs lambda >= 0 and a positive learning rate".into()));
        }
        if self.chain.mode == BeamMode::Passthrough && self.train_mask {
            return Err(Error::Config("mask adaptation needs a beamforming chain".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub pseudo_size: usize,
    pub mean_confidence: f64,
    pub loss: f64,
    pub dev_wer: Option<f64>,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct Adapted {
    pub mask: MaskEstimator,
    pub asr: AcousticModel,
    pub report: Vec<EpochRecord>,
    /// Pseudo sets in force for each epoch, by recording index.
    pub pseudo_history: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

pub fn report_csv(rows: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,pseudo_size,mean_confidence,loss,dev_wer,skipped\n");
    for r in rows {
        let wer = r.dev_wer.map(|w| format!("{w:.4}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{}\n",
            r.epoch, r.pseudo_size, r.mean_confidence, r.loss, wer, r.skipped
        ));
    }
    out
}

pub fn adapt(
    recordings: &[Recording],
    clean: &[AsrExample],
    mask: &MaskEstimator,
    recognizer: &Recognizer,
    field: &SteeringField,
    cfg: &AdaptationConfig,
    seed: u64,
) -> Result<Adapted> {
    cfg.validate()?;
    let prepared = recordings
        .iter()
        .map(|r| prepare(r, field, &cfg.chain))
        .collect::<Result<Vec<_>>>()?;
    let mut mask = mask.clone();
    let mut rec = recognizer.clone();
    let init = mask.params.clone();
    let train_mask = cfg.train_mask;
    mask.params.set_trainable(|n| train_mask && MaskEstimator::is_weight(n));
    let train_conv = cfg.train_asr_conv;
    rec.asr.params.set_trainable(|n| train_conv && AcousticModel::is_conv(n));
    let mut mask_opt = AdamW::new(cfg.optimizer.clone(), mask.params.len());
    let mut asr_opt = AdamW::new(cfg.optimizer.clone(), rec.asr.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6164_6170);
    let mut report = Vec::with_capacity(cfg.epochs);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut warnings = Vec::new();
    let mut pseudo: Vec<PseudoExample> = Vec::new();
    let mut tokens: Vec<Vec<usize>> = Vec::new();
    for epoch in 0..cfg.epochs {
        if epoch % cfg.refresh_every == 0 {
            pseudo = build_pseudo_dataset(
                recordings,
                &prepared,
                &mask,
                &rec,
                &cfg.chain,
                cfg.selection,
                cfg.oracle_transcripts,
            )?;
            tokens = pseudo
                .iter()
                .map(|p| rec.vocab.encode(&p.transcript))
                .collect::<Result<_>>()?;
            if pseudo.is_empty() {
                warnings.push(format!("epoch {epoch}: pseudo dataset is empty, using clean data only"));
            }
        }
        if pseudo.is_empty() && clean.is_empty() {
            return Err(Error::Data("nothing to adapt on: no clean data and no pseudo labels".into()));
        }
        let steps = pseudo.len().div_ceil(cfg.pseudo_per_batch).max(1);
        let (mut loss_sum, mut skipped, mut counted) = (0.0, 0usize, 0usize);
        for _ in 0..steps {
            let clean_idx = draw(&mut rng, clean.len(), cfg.clean_per_batch);
            let pseudo_idx = draw(&mut rng, pseudo.len(), cfg.pseudo_per_batch);
            let cb: Vec<&AsrExample> = clean_idx.iter().map(|&i| &clean[i]).collect();
            let pb: Vec<PseudoItem<'_>> = pseudo_idx
                .iter()
                .map(|&i| PseudoItem {
                    prepared: &prepared[pseudo[i].recording],
                    tokens: &tokens[i],
                })
                .collect();
            let parts = ctc_gradients(&cb, &pb, &mut mask, &mut rec.asr, &cfg.chain)?;
            skipped += parts.skipped;
            if parts.used == 0 {
                continue;
            }
            if !parts.ctc.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite adaptation loss".into(),
                });
            }
            mask_opt.step(&mut mask.params, cfg.learning_rate);
            pull_to_anchor(&mut mask.params, &init, cfg.lambda, cfg.learning_rate);
            asr_opt.step(&mut rec.asr.params, cfg.learning_rate);
            if !mask.params.is_finite() || !rec.asr.params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite parameters during adaptation".into(),
                });
            }
            loss_sum += parts.ctc + cfg.lambda * anchor_distance(&mask.params, &init);
            counted += 1;
        }
        let dev = if cfg.track_dev_wer {
            dev_wer(recordings, &prepared, &mask, &rec, &cfg.chain)?
        } else {
            None
        };
        let mean_conf = if pseudo.is_empty() {
            0.0
        } else {
            pseudo.iter().map(|p| p.confidence).sum::<f64>() / pseudo.len() as f64
        };
        report.push(EpochRecord {
            epoch,
            pseudo_size: pseudo.len(),
            mean_confidence: mean_conf,
            loss: if counted == 0 { f64::NAN } else { loss_sum / counted as f64 },
            dev_wer: dev,
            skipped,
        });
        history.push(pseudo.iter().map(|p| p.recording).collect());
    }
    Ok(Adapted {
        mask,
        asr: rec.asr,
        report,
        pseudo_history: history,
        warnings,
    })
}

fn draw(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut idx = sample(rng, n, k.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(c: &[f64]) -> Vec<PseudoExample> {
        c.iter()
            .enumerate()
            .map(|(i, &c)| PseudoExample {
                recording: i,
                transcript: String::new(),
                confidence: c,
            })
            .collect()
    }

    #[test]
    fn selection_rules() {
        let c = [3.0, -1.0, 7.5, 0.0, 7.5, 2.0];
        assert_eq!(select(scored(&c), Selection::TopK(usize::MAX)).len(), 6);
        assert!(select(scored(&c), Selection::TopK(0)).is_empty());
        let top = select(scored(&c), Selection::TopK(3));
        assert_eq!(top.iter().map(|p| p.recording).collect::<Vec<_>>(), vec![2, 4, 0]);
        let th = select(scored(&c), Selection::Threshold(2.0));
        assert!(th.iter().all(|p| p.confidence >= 2.0) && th.len() == 4);
        assert_eq!(select(scored(&c), Selection::TopFraction(0.5)).len(), 3);
    }

    #[test]
    fn top_k_matches_sort_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(0..30);
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
            let k = rng.gen_range(0..=n);
            let mut oracle: Vec<f64> = c.clone();
            oracle.sort_by(|a, b| b.partial_cmp(a).unwrap());
            oracle.truncate(k);
            let got: Vec<f64> = select(scored(&c), Selection::TopK(k)).iter().map(|p| p.confidence).collect();
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn regularizer_arithmetic() {
        let mut a = ParameterVector::new();
        a.push("fw.w", crate::autodiff::Tensor::zeros((1, 4)), true);
        a.push("norm.shift", crate::autodiff::Tensor::zeros((1, 2)), false);
        let mut b = a.clone();
        b.values_mut()[..4].copy_from_slice(&[1.0, -1.0, 1.0, 1.0]);
        b.values_mut()[4] = 10.0;
        assert_eq!(anchor_distance(&b, &a), 4.0);
        assert!((5e-4 * anchor_distance(&b, &a) - 0.002).abs() < 1e-15);
        assert_eq!(anchor_distance(&a, &a), 0.0);
    }

    #[test]
    fn proximal_step_shrinks_toward_anchor() {
        let mut a = ParameterVector::new();
        a.push("out.w", crate::autodiff::Tensor::zeros((1, 2)), true);
        let init = a.clone();
        a.values_mut().copy_from_slice(&[1.0, -2.0]);
        pull_to_anchor(&mut a, &init, 1e6, 5e-4);
        assert!((a.values()[0] - 1.0 / 1001.0).abs() < 1e-15);
    }

    fn toy_chain() -> (Prepared, MaskEstimator, AcousticModel, EnhanceConfig) {
        use crate::asr::AsrConfig;
        use crate::masknet::MaskNetConfig;
        use crate::scene::{build_steering_field, ArrayGeometry};
        use crate::signal::LogMelConfig;
        use ndarray::Array3;
        use num_complex::Complex64;
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let y = ComplexSpectrogram {
            data: Array3::from_shape_fn((2, 5, 8), |_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))),
            window: 8,
            hop: 2,
            signal_len: 16,
        };
        let g = ArrayGeometry::new(vec![[-0.05, 0.0, 0.0], [0.05, 0.0, 0.0]], 0).unwrap();
        let field = build_steering_field(&g, &[0.0, 1.2], &[0.0], 8, 16000).unwrap();
        let trace = DirectionTrace::from_indices(2, &[0, 0, 0, 1, 1, 1, 0, 0]);
        let features = crate::features::assemble(&y, &field, &trace, 0).unwrap();
        let mask = MaskEstimator::new(
            MaskNetConfig {
                bins: 5,
                mics: 2,
                hidden: 3,
                dropout: 0.0,
            },
            4,
        );
        let asr = AcousticModel::new(
            AsrConfig {
                vocab_size: 4,
                conv_channels: [2, 2],
                hidden: 3,
                mel: LogMelConfig {
                    win_length: 4,
                    hop: 1,
                    n_fft: 8,
                    n_mels: 3,
                    floor: 1e-10,
                    ..LogMelConfig::default()
                },
            },
            5,
        );
        let prepared = Prepared {
            dereverberated: Arc::new(y),
            features,
            trace,
            seconds: 0.001,
        };
        let chain = EnhanceConfig {
            wpe: None,
            ..EnhanceConfig::default()
        };
        (prepared, mask, asr, chain)
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (p, mut mask, mut asr, chain) = toy_chain();
        let tokens = vec![2usize];
        let mut init = mask.params.clone();
        // move the anchor so the regularizer contributes
        for v in init.values_mut().iter_mut().skip(60).step_by(7) {
            *v += 0.05;
        }
        let lambda = 0.3;
        let eval = |mask: &mut MaskEstimator, asr: &mut AcousticModel| {
            let item = [PseudoItem { prepared: &p, tokens: &tokens }];
            adaptation_loss(&[], &item, mask, &init, asr, lambda, &chain).unwrap()
        };
        let parts = eval(&mut mask, &mut asr);
        assert!(parts.regularizer > 0.0 && parts.used == 1);
        let analytic = mask.params.grads().to_vec();
        let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for s in mask.params.layout().to_vec().iter().filter(|s| MaskEstimator::is_weight(&s.name)) {
            for i in s.range() {
                let orig = mask.params.values()[i];
                mask.params.values_mut()[i] = orig + h;
                let up = eval(&mut mask, &mut asr).total();
                mask.params.values_mut()[i] = orig - h;
                let down = eval(&mut mask, &mut asr).total();
                mask.params.values_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((analytic[i] - fd).abs() / analytic[i].abs().max(1e-3 * scale));
            }
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn clean_only_batch_equals_plain_ctc() {
        let (_, mut mask, mut asr, chain) = toy_chain();
        let mel = crate::autodiff::Tensor::from_shape_fn((13, 3), |(t, b)| ((t * 3 + b) as f64).sin());
        let ex = AsrExample {
            mel: mel.clone(),
            tokens: vec![1],
            transcript: String::new(),
        };
        let init = mask.params.clone();
        let parts = adaptation_loss(&[&ex], &[], &mut mask, &init, &mut asr, 0.0, &chain).unwrap();
        let direct = crate::asr::ctc_loss(&asr.log_posteriors(&mel).unwrap(), &[1]).unwrap().loss;
        assert!((parts.total() - direct).abs() < 1e-12);
        assert_eq!(parts.regularizer, 0.0);
        let bad = AsrExample {
            tokens: vec![1, 1, 1],
            ..ex
        };
        let parts = adaptation_loss(&[&bad], &[], &mut mask, &init, &mut asr, 0.0, &chain).unwrap();
        assert_eq!((parts.used, parts.skipped), (0, 1));
    }
}
