//! Experiment orchestration: SI-SDR, seeded corpora, model training,
//! evaluation and the enhancement/adaptation ablation tables.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::adaptation::{adapt, AdaptationConfig, Recognizer, Recording, Selection};
use crate::asr::{
    score, train_asr, AcousticModel, AsrConfig, AsrExample, AsrTrainConfig, BeamConfig, ConfidenceWeights, NgramLm,
    Vocabulary,
};
use crate::beamformer::{enhance, BeamMode, EnhanceConfig, MaskSource};
use crate::dereverb::WpeConfig;
use crate::error::{Error, Result};
use crate::masknet::{mask_example, train_mask, MaskEstimator, MaskNetConfig, MaskTrainConfig};
use crate::optim::LrSchedule;
use crate::params::ParameterVector;
use crate::scene::dataset::{derive_seed, load_scene, manifest_path, read_manifest, StoredScene};
use crate::scene::{
    desk_field, tone_lexicon_render, tones::sample_transcript, ArrayGeometry, SceneConfig, SceneExample, Simulator,
    DirectionTrace, SteeringField,
};
use crate::signal::{istft, ComplexSpectrogram, WaveBuffer};

pub const SDR_CLAMP_DB: f64 = 60.0;
pub const DEFAULT_MAX_SHIFT: usize = 1024;

/// Scale-invariant SDR in dB, maximized over integer shifts of the
/// estimate in `[-max_shift, max_shift]` and clamped to +-60 dB. Each shift
/// is scored on the overlap of the two signals.
pub fn si_sdr(reference: &WaveBuffer, estimate: &WaveBuffer, max_shift: usize) -> Result<f64> {
    if reference.channels() != 1 || estimate.channels() != 1 {
        return Err(Error::invalid("si_sdr expects mono signals"));
    }
    let s = reference.channel(0).to_vec();
    let e = estimate.channel(0).to_vec();
    if s.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("si_sdr reference is all zeros"));
    }
    if e.is_empty() {
        return Ok(-SDR_CLAMP_DB);
    }
    let corr = cross_correlation(&s, &e);
    let prefix = |x: &[f64]| {
        let mut p = vec![0.0; x.len() + 1];
        for (i, v) in x.iter().enumerate() {
            p[i + 1] = p[i] + v * v;
        }
        p
    };
    let (ps, pe) = (prefix(&s), prefix(&e));
    let (n, m, l) = (s.len() as i64, e.len() as i64, corr.len() as i64);
    let k_max = max_shift as i64;
    let mut best = f64::NEG_INFINITY;
    for k in -k_max..=k_max {
        let a = 0.max(-k);
        let b = n.min(m - k);
        if b <= a {
            continue;
        }
        let es = ps[b as usize] - ps[a as usize];
        if es <= 0.0 {
            continue;
        }
        let ee = pe[(b + k) as usize] - pe[(a + k) as usize];
        let c = corr[k.rem_euclid(l) as usize];
        let target = c * c / es;
        let resid = ee - target;
        let db = if target <= 0.0 {
            -SDR_CLAMP_DB
        } else if resid <= 0.0 {
            SDR_CLAMP_DB
        } else {
            (10.0 * (target / resid).log10()).clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB)
        };
        best = best.max(db);
    }
    Ok(if best.is_finite() { best } else { -SDR_CLAMP_DB })
}

/// `c[k] = sum_n s[n] e[n + k]`, negative lags wrapped to the end.
fn cross_correlation(s: &[f64], e: &[f64]) -> Vec<f64> {
    let l = (s.len() + e.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(l);
    let inv = planner.plan_fft_inverse(l);
    let load = |x: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); l];
        for (b, v) in buf.iter_mut().zip(x) {
            b.re = *v;
        }
        buf
    };
    let (mut a, mut b) = (load(s), load(e));
    fwd.process(&mut a);
    fwd.process(&mut b);
    let mut c: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut c);
    c.iter().map(|v| v.re / l as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    NonOverlapped,
    Overlapped,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::NonOverlapped => "non-overlapped",
            Subset::Overlapped => "overlapped",
        }
    }

    fn of(overlapped: bool) -> Self {
        if overlapped {
            Subset::Overlapped
        } else {
            Subset::NonOverlapped
        }
    }
}

/// One condition of the ablation on one subset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub label: String,
    pub mvdr: bool,
    pub hma: bool,
    /// Adaptation data description, empty when not adapted.
    pub adaptation: String,
    pub si_sdr_db: f64,
    pub wer_pct: f64,
    pub utterances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub subset: Subset,
    pub rows: Vec<ResultRow>,
}

/// Dataset sizes, pipeline toggles, training recipes and metric options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Condition the mask estimator and recognizer are trained on.
    pub train_scene: SceneConfig,
    /// Condition the pipeline is evaluated and adapted on.
    pub eval_scene: SceneConfig,
    pub train_scenes: usize,
    /// Training scenes used for the mask estimator; 0 means all.
    pub mask_scenes: usize,
    pub eval_scenes: usize,
    /// Dry rendered utterances for recognizer training and adaptation.
    pub clean_utterances: usize,
    /// Extra text-only sentences for the language model.
    pub lm_sentences: usize,
    pub mvdr: bool,
    pub hma: bool,
    pub dereverb: bool,
    pub wpe: WpeConfig,
    pub loading: f64,
    pub reference: usize,
    /// Pseudo-label selection rules evaluated in the ablation.
    pub selections: Vec<Selection>,
    pub oracle_adaptation: bool,
    pub mask: MaskTrainConfig,
    pub asr: AsrTrainConfig,
    /// Add enhanced training scenes to the recognizer's training data.
    pub asr_on_enhanced: bool,
    pub lm_smoothing: f64,
    pub beam: BeamConfig,
    pub confidence: ConfidenceWeights,
    pub adaptation: AdaptationConfig,
    pub max_shift: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let eval_scene = SceneConfig {
            noise_pole: 0.45,
            rt60: [0.3, 0.4],
            ..SceneConfig::default()
        };
        Self {
            train_scene: SceneConfig::default(),
            eval_scene,
            train_scenes: 200,
            mask_scenes: 48,
            eval_scenes: 80,
            clean_utterances: 96,
            lm_sentences: 400,
            mvdr: true,
            hma: true,
            dereverb: false,
            wpe: WpeConfig::default(),
            loading: crate::beamformer::DEFAULT_LOADING,
            reference: 0,
            selections: vec![Selection::TopFraction(0.5)],
            oracle_adaptation: true,
            mask: MaskTrainConfig {
                epochs: 12,
                schedule: LrSchedule::ExpDecay {
                    base: 3e-3,
                    factor: 0.9,
                },
                hidden: 32,
                ..MaskTrainConfig::default()
            },
            asr: AsrTrainConfig {
                epochs: 30,
                schedule: LrSchedule::WarmupExpDecay {
                    peak: 3e-3,
                    factor: 0.95,
                },
                feature_noise: 0.1,
                ..AsrTrainConfig::default()
            },
            asr_on_enhanced: true,
            lm_smoothing: NgramLm::DEFAULT_SMOOTHING,
            beam: BeamConfig::default(),
            confidence: ConfidenceWeights::default(),
            adaptation: AdaptationConfig {
                epochs: 8,
                refresh_every: 2,
                learning_rate: 3e-4,
                track_dev_wer: false,
                ..AdaptationConfig::default()
            },
            max_shift: DEFAULT_MAX_SHIFT,
        }
    }
}

impl ExperimentConfig {
    /// A few short scenes and a couple of epochs; for plumbing checks.
    pub fn smoke() -> Self {
        let d = Self::default();
        Self {
            train_scenes: 3,
            eval_scenes: 3,
            clean_utterances: 4,
            lm_sentences: 20,
            dereverb: false,
            selections: vec![Selection::TopFraction(0.5)],
            mask: MaskTrainConfig {
                epochs: 1,
                hidden: 4,
                ..d.mask.clone()
            },
            asr: AsrTrainConfig {
                epochs: 1,
                model: AsrConfig {
                    conv_channels: [4, 4],
                    hidden: 8,
                    ..AsrConfig::default()
                },
                ..d.asr.clone()
            },
            adaptation: AdaptationConfig {
                epochs: 1,
                clean_per_batch: 2,
                pseudo_per_batch: 2,
                ..d.adaptation.clone()
            },
            ..d
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.hma && !self.mvdr {
            return Err(Error::Config("hma requires mvdr".into()));
        }
        if self.train_scenes == 0 || self.eval_scenes == 0 || self.clean_utterances == 0 {
            return Err(Error::Config("scene and utterance counts must be >= 1".into()));
        }
        self.train_scene.validate()?;
        self.eval_scene.validate()?;
        if (self.train_scene.window, self.train_scene.hop) != (self.eval_scene.window, self.eval_scene.hop) {
            return Err(Error::Config("train and eval scenes must share the STFT framing".into()));
        }
        if self.dereverb {
            self.wpe.validate()?;
        }
        if !(self.loading > 0.0) {
            return Err(Error::Config("loading must be positive".into()));
        }
        self.asr.model.validate()?;
        if self.asr.model.vocab_size != Vocabulary::desk().len() {
            return Err(Error::Config("asr vocab_size must match the desk vocabulary".into()));
        }
        if self.beam.beam == 0 {
            return Err(Error::Config("beam must be >= 1".into()));
        }
        let mut adaptation = self.adaptation.clone();
        adaptation.chain = self.chain();
        adaptation.validate()
    }

    /// The enhancement chain selected by the MVDR/HMA toggles.
    pub fn chain(&self) -> EnhanceConfig {
        EnhanceConfig {
            mode: match (self.mvdr, self.hma) {
                (_, true) => BeamMode::HeadMovementAware,
                (true, false) => BeamMode::TimeInvariant,
                (false, false) => BeamMode::Passthrough,
            },
            ..self.chain_with(BeamMode::HeadMovementAware)
        }
    }

    pub fn chain_with(&self, mode: BeamMode) -> EnhanceConfig {
        EnhanceConfig {
            mode,
            wpe: self.dereverb.then(|| self.wpe.clone()),
            loading: self.loading,
            reference: self.reference,
        }
    }

    pub fn field(&self) -> SteeringField {
        desk_field(&ArrayGeometry::headset(), self.train_scene.window)
    }
}

const TRAIN_STREAM: u64 = 0x7472_6169;
const EVAL_STREAM: u64 = 0x6576_616c;
const CLEAN_STREAM: u64 = 0x636c_6e00;
const LM_STREAM: u64 = 0x6c6d_0000;

fn scenes(scene: &SceneConfig, prefix: &str, stream: u64, count: usize, seed: u64) -> Result<Vec<SceneExample>> {
    let sim = Simulator::desk(scene.clone())?;
    (0..count as u64)
        .map(|i| sim.synthesize(&format!("{prefix}{i:04}"), derive_seed(seed ^ stream, i)))
        .collect()
}

pub fn train_corpus(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<SceneExample>> {
    scenes(&cfg.train_scene, "train", TRAIN_STREAM, cfg.train_scenes, seed)
}

pub fn eval_corpus(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<SceneExample>> {
    scenes(&cfg.eval_scene, "eval", EVAL_STREAM, cfg.eval_scenes, seed)
}

/// Dry rendered utterances with the training condition's word counts.
pub fn clean_corpus(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<(String, WaveBuffer)>> {
    let vocab = Vocabulary::desk();
    let words = cfg.train_scene.words;
    (0..cfg.clean_utterances as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ CLEAN_STREAM, i));
            let n = rng.gen_range(words[0].max(1)..=words[1].max(1));
            let text = sample_transcript(crate::scene::DESK_WORDS, n, &mut rng);
            let wave = tone_lexicon_render(&vocab, &text, &cfg.train_scene.tones, &mut rng)?;
            Ok((text, wave))
        })
        .collect()
}

pub fn lm_corpus(cfg: &ExperimentConfig, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ LM_STREAM);
    let words = cfg.train_scene.words;
    (0..cfg.lm_sentences)
        .map(|_| {
            let n = rng.gen_range(words[0].max(1)..=words[1].max(1));
            sample_transcript(crate::scene::DESK_WORDS, n, &mut rng)
        })
        .collect()
}

/// Trained mask estimator and recognizer.
#[derive(Clone, Debug)]
pub struct Models {
    pub mask: MaskEstimator,
    pub recognizer: Recognizer,
}

const MASK_PARAMS: &str = "mask.params";
const MASK_CONFIG: &str = "mask.json";
const ASR_PARAMS: &str = "asr.params";
const ASR_CONFIG: &str = "asr.json";
const LM_FILE: &str = "lm.json";
const VOCAB_FILE: &str = "vocab.txt";

fn artifact(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::Config(format!("missing checkpoint artifact {}", p.display())))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl Models {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.save_mask(dir)?;
        self.save_recognizer(dir)
    }

    pub fn save_mask(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.mask.params.save(dir.join(MASK_PARAMS))?;
        fs::write(dir.join(MASK_CONFIG), serde_json::to_string_pretty(&self.mask.cfg).expect("json"))?;
        Ok(())
    }

    pub fn save_recognizer(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let r = &self.recognizer;
        r.asr.params.save(dir.join(ASR_PARAMS))?;
        fs::write(dir.join(ASR_CONFIG), serde_json::to_string_pretty(&r.asr.cfg).expect("json"))?;
        r.lm.save(dir.join(LM_FILE))?;
        r.vocab.save(dir.join(VOCAB_FILE))
    }

    pub fn load_mask(dir: &Path) -> Result<MaskEstimator> {
        let cfg: MaskNetConfig = read_json(&artifact(dir, MASK_CONFIG)?)?;
        MaskEstimator::from_params(cfg, ParameterVector::load(artifact(dir, MASK_PARAMS)?)?)
    }

    pub fn load_asr(dir: &Path) -> Result<AcousticModel> {
        let cfg: AsrConfig = read_json(&artifact(dir, ASR_CONFIG)?)?;
        AcousticModel::from_params(cfg, ParameterVector::load(artifact(dir, ASR_PARAMS)?)?)
    }

    pub fn load_lm(dir: &Path) -> Result<NgramLm> {
        NgramLm::load(artifact(dir, LM_FILE)?)
    }

    pub fn load(dir: &Path, beam: &BeamConfig, weights: &ConfidenceWeights) -> Result<Self> {
        let mask = Self::load_mask(dir)?;
        let asr = Self::load_asr(dir)?;
        let lm = Self::load_lm(dir)?;
        let vocab = Vocabulary::load(artifact(dir, VOCAB_FILE)?)?;
        if vocab.len() != asr.cfg.vocab_size || lm.vocab_size != vocab.len() {
            return Err(Error::Config("checkpoint vocabulary sizes disagree".into()));
        }
        Ok(Self {
            mask,
            recognizer: Recognizer {
                asr,
                lm,
                vocab,
                beam: beam.clone(),
                weights: *weights,
            },
        })
    }
}

/// Loss curves of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub mask: Vec<f64>,
    pub asr: Vec<f64>,
}

pub fn train_mask_model(cfg: &ExperimentConfig, train: &[SceneExample], seed: u64) -> Result<(MaskEstimator, Vec<f64>)> {
    let field = cfg.field();
    let wpe = cfg.dereverb.then_some(&cfg.wpe);
    let n = if cfg.mask_scenes == 0 {
        train.len()
    } else {
        cfg.mask_scenes.min(train.len())
    };
    let data = train[..n]
        .iter()
        .map(|s| mask_example(s, &field, cfg.reference, wpe))
        .collect::<Result<Vec<_>>>()?;
    train_mask(&data, &cfg.mask, seed)
}

pub fn train_lm(cfg: &ExperimentConfig, sentences: &[String]) -> Result<NgramLm> {
    let vocab = Vocabulary::desk();
    let tokens = sentences
        .iter()
        .map(|s| vocab.encode(s))
        .collect::<Result<Vec<_>>>()?;
    NgramLm::train(&tokens, vocab.len(), cfg.lm_smoothing)
}

pub fn clean_examples(cfg: &ExperimentConfig, clean: &[(String, WaveBuffer)]) -> Result<Vec<AsrExample>> {
    let vocab = Vocabulary::desk();
    clean
        .iter()
        .map(|(t, w)| AsrExample::from_wave(&cfg.asr.model, &vocab, w, t))
        .collect()
}

/// Recognizer training data: the clean corpus plus, optionally, the
/// training scenes enhanced with `mask`.
pub fn asr_training_set(
    cfg: &ExperimentConfig,
    clean: &[(String, WaveBuffer)],
    train: &[SceneExample],
    mask: &MaskEstimator,
) -> Result<Vec<AsrExample>> {
    let mut data = clean_examples(cfg, clean)?;
    if cfg.asr_on_enhanced {
        let vocab = Vocabulary::desk();
        let field = cfg.field();
        let chain = cfg.chain();
        for s in train {
            let out = enhance(&s.mixture, &field, &s.trace, MaskSource::Network(mask), &chain)?;
            data.push(AsrExample::from_wave(&cfg.asr.model, &vocab, &out.wave, &s.transcript)?);
        }
    }
    Ok(data)
}

/// Simulates the training condition and trains all three models.
pub fn train_models(cfg: &ExperimentConfig, seed: u64) -> Result<(Models, TrainingLog)> {
    cfg.validate()?;
    let train = train_corpus(cfg, seed)?;
    let clean = clean_corpus(cfg, seed)?;
    let (mask, mask_curve) = train_mask_model(cfg, &train, seed)?;
    let data = asr_training_set(cfg, &clean, &train, &mask)?;
    let (asr, asr_curve) = train_asr(&data, &cfg.asr, seed)?;
    let lm = train_lm(cfg, &lm_corpus(cfg, seed))?;
    let models = Models {
        mask,
        recognizer: Recognizer {
            asr,
            lm,
            vocab: Vocabulary::desk(),
            beam: cfg.beam.clone(),
            weights: cfg.confidence,
        },
    };
    Ok((
        models,
        TrainingLog {
            mask: mask_curve,
            asr: asr_curve,
        },
    ))
}

/// What evaluation needs from a scene, whether simulated or read back
/// from a dataset directory.
#[derive(Clone, Debug)]
pub struct EvalScene {
    pub id: String,
    pub mixture: ComplexSpectrogram,
    pub trace: DirectionTrace,
    pub clean_wave: WaveBuffer,
    pub transcript: String,
    pub overlapped: bool,
}

impl From<&SceneExample> for EvalScene {
    fn from(s: &SceneExample) -> Self {
        Self {
            id: s.id.clone(),
            mixture: s.mixture.clone(),
            trace: s.trace.clone(),
            clean_wave: s.clean_wave.clone(),
            transcript: s.transcript.clone(),
            overlapped: s.overlapped,
        }
    }
}

impl From<StoredScene> for EvalScene {
    fn from(s: StoredScene) -> Self {
        Self {
            id: s.record.id,
            mixture: s.mixture,
            trace: s.trace,
            clean_wave: s.clean,
            transcript: s.record.transcript,
            overlapped: s.record.overlapped,
        }
    }
}

impl EvalScene {
    pub fn recording(&self) -> Recording {
        Recording {
            id: self.id.clone(),
            mixture: self.mixture.clone(),
            trace: self.trace.clone(),
            transcript: Some(self.transcript.clone()),
        }
    }
}

/// Every scene listed in `dir/manifest.jsonl`.
pub fn load_eval_dir(dir: &Path) -> Result<Vec<EvalScene>> {
    read_manifest(&manifest_path(dir))?
        .iter()
        .map(|r| load_scene(dir, r).map(EvalScene::from))
        .collect()
}

pub fn to_eval(scenes: &[SceneExample]) -> Vec<EvalScene> {
    scenes.iter().map(EvalScene::from).collect()
}

/// Per-utterance outcome of one condition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UtteranceScore {
    pub id: String,
    pub overlapped: bool,
    pub si_sdr_db: f64,
    pub errors: usize,
    pub words: usize,
    pub hypothesis: String,
}

/// What produces the waveform that is scored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Condition {
    /// The reference microphone, untouched.
    Unprocessed,
    Enhanced(BeamMode),
    /// The dry target itself.
    CleanOracle,
}

pub fn score_utterance(
    scene: &EvalScene,
    wave: &WaveBuffer,
    recognizer: &Recognizer,
    max_shift: usize,
) -> Result<UtteranceScore> {
    let hyp = recognizer.recognize(wave)?;
    let reference = score::words(&scene.transcript);
    Ok(UtteranceScore {
        id: scene.id.clone(),
        overlapped: scene.overlapped,
        si_sdr_db: si_sdr(&scene.clean_wave, wave, max_shift)?,
        errors: score::edit_distance(&reference, &score::words(&hyp.text)),
        words: reference.len(),
        hypothesis: hyp.text,
    })
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    models: &Models,
    scenes: &[EvalScene],
    condition: Condition,
) -> Result<Vec<UtteranceScore>> {
    let field = cfg.field();
    scenes
        .iter()
        .map(|s| {
            let wave = match condition {
                Condition::Unprocessed => {
                    istft(&s.mixture.select_channel(cfg.reference), s.mixture.window, s.mixture.hop)?
                }
                Condition::CleanOracle => s.clean_wave.clone(),
                Condition::Enhanced(mode) => {
                    let chain = cfg.chain_with(mode);
                    enhance(&s.mixture, &field, &s.trace, MaskSource::Network(&models.mask), &chain)?.wave
                }
            };
            score_utterance(s, &wave, &models.recognizer, cfg.max_shift)
        })
        .collect()
}

/// Mean SI-SDR and pooled WER over `scores`; `None` when empty.
pub fn summarize<'a>(scores: impl IntoIterator<Item = &'a UtteranceScore>) -> Option<(f64, f64, usize)> {
    let (mut sdr, mut errors, mut words, mut n) = (0.0, 0usize, 0usize, 0usize);
    for s in scores {
        sdr += s.si_sdr_db;
        errors += s.errors;
        words += s.words;
        n += 1;
    }
    (n > 0 && words > 0).then(|| (sdr / n as f64, 100.0 * errors as f64 / words as f64, n))
}

fn selection_label(rule: Selection) -> String {
    match rule {
        Selection::Threshold(t) => format!("c >= {t}"),
        Selection::TopK(k) => format!("top {k}"),
        Selection::TopFraction(f) => format!("top {:.0}%", 100.0 * f),
    }
}

struct Condi {
    label: String,
    mvdr: bool,
    hma: bool,
    adaptation: String,
    scores: Vec<UtteranceScore>,
}

/// Every ablation condition on `eval`, adaptation included, with already
/// trained models.
pub fn ablation_with(
    cfg: &ExperimentConfig,
    models: &Models,
    eval: &[EvalScene],
    clean: &[AsrExample],
    seed: u64,
) -> Result<Vec<AblationTable>> {
    cfg.validate()?;
    let mut conds = vec![Condi {
        label: "no enhancement".into(),
        mvdr: false,
        hma: false,
        adaptation: String::new(),
        scores: evaluate(cfg, models, eval, Condition::Unprocessed)?,
    }];
    if cfg.mvdr {
        conds.push(Condi {
            label: "MVDR".into(),
            mvdr: true,
            hma: false,
            adaptation: String::new(),
            scores: evaluate(cfg, models, eval, Condition::Enhanced(BeamMode::TimeInvariant))?,
        });
    }
    if cfg.hma {
        conds.push(Condi {
            label: "MVDR + HMA".into(),
            mvdr: true,
            hma: true,
            adaptation: String::new(),
            scores: evaluate(cfg, models, eval, Condition::Enhanced(BeamMode::HeadMovementAware))?,
        });
    }
    let chain = cfg.chain();
    if chain.mode != BeamMode::Passthrough {
        let recordings: Vec<Recording> = eval.iter().map(EvalScene::recording).collect();
        let field = cfg.field();
        let mut runs: Vec<(Selection, bool)> = cfg.selections.iter().map(|&s| (s, false)).collect();
        if cfg.oracle_adaptation {
            runs.push((Selection::TopFraction(1.0), true));
        }
        for (rule, oracle) in runs {
            let acfg = AdaptationConfig {
                selection: rule,
                oracle_transcripts: oracle,
                chain: chain.clone(),
                ..cfg.adaptation.clone()
            };
            let adapted = adapt(&recordings, clean, &models.mask, &models.recognizer, &field, &acfg, seed)?;
            let after = Models {
                mask: adapted.mask,
                recognizer: Recognizer {
                    asr: adapted.asr,
                    ..models.recognizer.clone()
                },
            };
            let data = if oracle {
                "oracle text".to_string()
            } else {
                selection_label(rule)
            };
            conds.push(Condi {
                label: format!("{} + adaptation ({data})", if cfg.hma { "MVDR + HMA" } else { "MVDR" }),
                mvdr: cfg.mvdr,
                hma: cfg.hma,
                adaptation: data,
                scores: evaluate(cfg, &after, eval, Condition::Enhanced(chain.mode))?,
            });
        }
    }
    conds.push(Condi {
        label: "oracle (clean target)".into(),
        mvdr: false,
        hma: false,
        adaptation: String::new(),
        scores: evaluate(cfg, models, eval, Condition::CleanOracle)?,
    });

    let mut tables = Vec::new();
    for subset in [Subset::NonOverlapped, Subset::Overlapped] {
        let rows: Vec<ResultRow> = conds
            .iter()
            .filter_map(|c| {
                summarize(c.scores.iter().filter(|s| Subset::of(s.overlapped) == subset)).map(|(sdr, wer, n)| {
                    ResultRow {
                        label: c.label.clone(),
                        mvdr: c.mvdr,
                        hma: c.hma,
                        adaptation: c.adaptation.clone(),
                        si_sdr_db: sdr,
                        wer_pct: wer,
                        utterances: n,
                    }
                })
            })
            .collect();
        if !rows.is_empty() {
            tables.push(AblationTable { subset, rows });
        }
    }
    Ok(tables)
}

/// Loads the checkpoints in `checkpoints`, simulates the evaluation
/// condition for `seed` and runs every ablation condition.
pub fn run_ablation(cfg: &ExperimentConfig, checkpoints: &Path, seed: u64) -> Result<Vec<AblationTable>> {
    cfg.validate()?;
    let models = Models::load(checkpoints, &cfg.beam, &cfg.confidence)?;
    let eval = to_eval(&eval_corpus(cfg, seed)?);
    let clean = clean_examples(cfg, &clean_corpus(cfg, seed)?)?;
    ablation_with(cfg, &models, &eval, &clean, seed)
}

pub fn tables_csv(tables: &[AblationTable]) -> String {
    let mut out = String::from("subset,condition,mvdr,hma,adaptation,si_sdr_db,wer_pct,utterances\n");
    for t in tables {
        for r in &t.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.4},{:.4},{}\n",
                t.subset.name(),
                r.label,
                r.mvdr,
                r.hma,
                r.adaptation,
                r.si_sdr_db,
                r.wer_pct,
                r.utterances
            ));
        }
    }
    out
}

pub fn tables_text(tables: &[AblationTable]) -> String {
    let tick = |b: bool| if b { "x" } else { "-" };
    let mut out = String::new();
    for t in tables {
        out.push_str(&format!("{} ({} utterances)\n", t.subset.name(), t.rows[0].utterances));
        out.push_str(&format!(
            "{:<5} {:<5} {:<14} {:>12} {:>9}  {}\n",
            "MVDR", "HMA", "Adaptation", "SI-SDR [dB]", "WER [%]", "condition"
        ));
        for r in &t.rows {
            let adaptation = if r.adaptation.is_empty() { "-" } else { r.adaptation.as_str() };
            out.push_str(&format!(
                "{:<5} {:<5} {:<14} {:>12.2} {:>9.2}  {}\n",
                tick(r.mvdr),
                tick(r.hma),
                adaptation,
                r.si_sdr_db,
                r.wer_pct,
                r.label
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| normal.sample(&mut rng)).collect()
    }

    #[test]
    fn si_sdr_examples() {
        let s = noise(4000, 1);
        let r = WaveBuffer::mono(s.clone());
        let twice = WaveBuffer::mono(s.iter().map(|v| 2.0 * v).collect());
        assert_eq!(si_sdr(&r, &twice, 1024).unwrap(), 60.0);

        let mut n = noise(4000, 2);
        let es: f64 = s.iter().map(|v| v * v).sum();
        let proj = n.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / es;
        n.iter_mut().zip(&s).for_each(|(a, b)| *a -= proj * b);
        let en: f64 = n.iter().map(|v| v * v).sum();
        let k = (es / 10.0 / en).sqrt();
        let est = WaveBuffer::mono(s.iter().zip(&n).map(|(a, b)| a + k * b).collect());
        let v = si_sdr(&r, &est, 0).unwrap();
        assert!((v - 10.0).abs() < 0.01, "{v}");
        // shifts can only help
        assert!(si_sdr(&r, &est, 1024).unwrap() >= v);
    }

    #[test]
    fn shifted_reference_is_realigned() {
        let s = noise(3000, 3);
        let r = WaveBuffer::mono(s.clone());
        for d in [-700i64, -1, 1, 513, 1024] {
            let shifted: Vec<f64> = (0..3000i64)
                .map(|i| {
                    let j = i - d;
                    if (0..3000).contains(&j) {
                        s[j as usize]
                    } else {
                        0.0
                    }
                })
                .collect();
            let e = WaveBuffer::mono(shifted);
            assert_eq!(si_sdr(&r, &e, 1024).unwrap(), 60.0, "shift {d}");
            assert!(si_sdr(&r, &e, 0).unwrap() < 10.0);
        }
    }

    #[test]
    fn si_sdr_matches_direct_shift_search() {
        let s = noise(300, 4);
        let e = noise(350, 5);
        let (r, w) = (WaveBuffer::mono(s.clone()), WaveBuffer::mono(e.clone()));
        let mut best = f64::NEG_INFINITY;
        for k in -20i64..=20 {
            let idx: Vec<usize> = (0..300i64)
                .filter(|&n| (0..350).contains(&(n + k)))
                .map(|n| n as usize)
                .collect();
            let ss: Vec<f64> = idx.iter().map(|&n| s[n]).collect();
            let ee: Vec<f64> = idx.iter().map(|&n| e[(n as i64 + k) as usize]).collect();
            let alpha = ss.iter().zip(&ee).map(|(a, b)| a * b).sum::<f64>() / ss.iter().map(|a| a * a).sum::<f64>();
            let num: f64 = ss.iter().map(|a| (alpha * a).powi(2)).sum();
            let den: f64 = ss.iter().zip(&ee).map(|(a, b)| (alpha * a - b).powi(2)).sum();
            best = best.max(10.0 * (num / den).log10());
        }
        let got = si_sdr(&r, &w, 20).unwrap();
        assert!((got - best.clamp(-60.0, 60.0)).abs() < 1e-9, "{got} vs {best}");
    }

    #[test]
    fn si_sdr_rejects_bad_input() {
        let z = WaveBuffer::mono(vec![0.0; 10]);
        let x = WaveBuffer::mono(noise(10, 1));
        assert!(matches!(si_sdr(&z, &x, 4), Err(Error::InvalidInput(_))));
        let stereo = WaveBuffer::new(ndarray::Array2::ones((2, 10)), 16_000).unwrap();
        assert!(si_sdr(&stereo, &x, 4).is_err());
        assert_eq!(si_sdr(&x, &WaveBuffer::mono(vec![0.0; 10]), 4).unwrap(), -60.0);
    }

    #[test]
    fn config_toggles_and_round_trip() {
        let cfg = ExperimentConfig {
            mvdr: false,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let d = ExperimentConfig::default();
        d.validate().unwrap();
        assert_eq!(d.chain().mode, BeamMode::HeadMovementAware);
        let back = ExperimentConfig::from_toml(&d.to_toml()).unwrap();
        assert_eq!(back, d);
        assert!(matches!(ExperimentConfig::from_toml("mvdr = 3"), Err(Error::Config(_))));
    }

    #[test]
    fn missing_checkpoint_names_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_ablation(&ExperimentConfig::smoke(), dir.path(), 0).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains(MASK_CONFIG), "{msg}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn smoke_ablation_layout_and_determinism() {
        let cfg = ExperimentConfig::smoke();
        let (models, _) = train_models(&cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        models.save(dir.path()).unwrap();
        let a = run_ablation(&cfg, dir.path(), 5).unwrap();
        let b = run_ablation(&cfg, dir.path(), 5).unwrap();
        assert_eq!(tables_csv(&a), tables_csv(&b));
        for t in &a {
            let labels: Vec<&str> = t.rows.iter().map(|r| r.label.as_str()).collect();
            assert_eq!(labels[0], "no enhancement");
            assert_eq!(labels[1], "MVDR");
            assert_eq!(labels[2], "MVDR + HMA");
            assert!(labels[3].contains("top 50%"));
            assert!(labels[4].contains("oracle text"));
            let oracle = t.rows.last().unwrap();
            assert_eq!(oracle.si_sdr_db, 60.0);
            assert!(t.rows.iter().all(|r| r.si_sdr_db.is_finite() && r.wer_pct.is_finite()));
        }
        assert!(tables_text(&a).contains("SI-SDR [dB]"));
    }
}
