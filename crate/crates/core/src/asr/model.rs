//! Acoustic model: two strided convolutions, a GRU and a softmax output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{conv_out_len, dense, glorot, gru, im2col};
use crate::params::{Bound, ParameterVector};
use crate::signal::{LogMel, LogMelConfig, WaveBuffer};

pub const NORM_SHIFT: &str = "norm.shift";
pub const NORM_SCALE: &str = "norm.scale";
const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsrConfig {
    pub vocab_size: usize,
    pub conv_channels: [usize; 2],
    pub hidden: usize,
    pub mel: LogMelConfig,
}

impl Default for AsrConfig {
    fn default() -> Self {
        Self {
            vocab_size: crate::asr::Vocabulary::desk().len(),
            conv_channels: [32, 32],
            hidden: 96,
            mel: LogMelConfig {
                n_mels: 40,
                // keeps silent gaps from dominating the band statistics
                floor: 1e-2,
                ..LogMelConfig::default()
            },
        }
    }
}

impl AsrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.hidden == 0 || self.conv_channels.contains(&0) {
            return Err(Error::Config("asr sizes must be positive and |V| >= 2".into()));
        }
        LogMel::new(self.mel.clone()).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn n_mels(&self) -> usize {
        self.mel.n_mels
    }

    /// Posterior frames for `frames` log-mel frames.
    pub fn output_frames(frames: usize) -> usize {
        conv_out_len(conv_out_len(frames, KERNEL, STRIDE, PAD), KERNEL, STRIDE, PAD)
    }
}

#[derive(Clone, Debug)]
pub struct AcousticModel {
    pub cfg: AsrConfig,
    pub params: ParameterVector,
}

pub struct AsrForward {
    pub bound: Bound,
    /// `T'/4 x |V|` log posteriors.
    pub log_probs: Var,
}

impl AcousticModel {
    pub fn new(cfg: AsrConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.n_mels();
        let [c1, c2] = cfg.conv_channels;
        let h = cfg.hidden;
        let v = cfg.vocab_size;
        let mut params = ParameterVector::new();
        params.push(NORM_SHIFT, Tensor::zeros((1, n)), false);
        params.push(NORM_SCALE, Tensor::ones((1, n)), false);
        params.push_uniform("conv1.w", KERNEL * n, c1, glorot(KERNEL * n, c1), &mut rng);
        params.push("conv1.b", Tensor::zeros((1, c1)), true);
        params.push_uniform("conv2.w", KERNEL * c1, c2, glorot(KERNEL * c1, c2), &mut rng);
        params.push("conv2.b", Tensor::zeros((1, c2)), true);
        params.push_uniform("gru.w", c2, 3 * h, glorot(c2, 3 * h), &mut rng);
        params.push("gru.b", Tensor::zeros((1, 3 * h)), true);
        params.push_uniform("gru.u", h, 3 * h, glorot(h, 3 * h), &mut rng);
        params.push("gru.bh", Tensor::zeros((1, 3 * h)), true);
        params.push_uniform("out.w", h, v, glorot(h, v), &mut rng);
        params.push("out.b", Tensor::zeros((1, v)), true);
        Self { cfg, params }
    }

    pub fn from_params(cfg: AsrConfig, params: ParameterVector) -> Result<Self> {
        let fresh = Self::new(cfg.clone(), 0);
        let same = fresh.params.layout().len() == params.layout().len()
            && fresh
                .params
                .layout()
                .iter()
                .zip(params.layout())
                .all(|(a, b)| a.name == b.name && a.rows == b.rows && a.cols == b.cols);
        if !same {
            return Err(Error::Config("asr checkpoint does not match the configured shape".into()));
        }
        Ok(Self { cfg, params })
    }

    pub fn is_weight(name: &str) -> bool {
        !name.starts_with("norm.")
    }

    pub fn is_conv(name: &str) -> bool {
        name.starts_with("conv")
    }

    fn slice(&self, name: &str) -> usize {
        self.params.index_of(name).expect("asr layout")
    }

    /// Per-band mean and inverse standard deviation over `mels`.
    pub fn fit_normalization(&mut self, mels: &[&Tensor]) {
        let n = self.cfg.n_mels();
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for m in mels {
            for row in m.rows() {
                for (b, v) in row.iter().enumerate() {
                    sum[b] += v;
                    sq[b] += v * v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return;
        }
        let mut shift = Tensor::zeros((1, n));
        let mut scale = Tensor::ones((1, n));
        for b in 0..n {
            let mean = sum[b] / count as f64;
            shift[[0, b]] = mean;
            scale[[0, b]] = 1.0 / (sq[b] / count as f64 - mean * mean).max(1e-8).sqrt();
        }
        let (a, b) = (self.slice(NORM_SHIFT), self.slice(NORM_SCALE));
        self.params.set(a, &shift);
        self.params.set(b, &scale);
    }

    /// Log-mel features of a mono wave with this model's settings.
    pub fn features(&self, wave: &WaveBuffer) -> Result<Tensor> {
        Ok(crate::signal::log_mel_with(wave, &self.cfg.mel)?.data)
    }

    /// Records the model on `tape` from a `T' x n_mels` variable.
    pub fn forward(&self, tape: &mut Tape, mel: Var) -> Result<AsrForward> {
        let (frames, bands) = tape.value(mel).dim();
        if bands != self.cfg.n_mels() {
            return Err(Error::invalid(format!(
                "asr expects {} mel bands, got {bands}",
                self.cfg.n_mels()
            )));
        }
        if frames < 4 {
            return Err(Error::invalid(format!("asr needs at least 4 frames, got {frames}")));
        }
        let bound = self.params.bind(tape);
        let p = |name: &str| bound.var(self.slice(name));
        let shift = self.params.view(self.slice(NORM_SHIFT));
        let scale = self.params.view(self.slice(NORM_SCALE));
        let neg = Tensor::from_shape_fn((frames, bands), |(_, b)| -shift[[0, b]]);
        let sc = Tensor::from_shape_fn((frames, bands), |(_, b)| scale[[0, b]]);
        let x = tape.add_const(mel, &neg);
        let x = tape.mul_const(x, sc);
        let c = im2col(tape, x, KERNEL, STRIDE, PAD);
        let c = dense(tape, c, p("conv1.w"), p("conv1.b"));
        let c = tape.relu(c);
        let c = im2col(tape, c, KERNEL, STRIDE, PAD);
        let c = dense(tape, c, p("conv2.w"), p("conv2.b"));
        let c = tape.relu(c);
        let proj = dense(tape, c, p("gru.w"), p("gru.b"));
        let h = gru(tape, proj, p("gru.u"), p("gru.bh"));
        let logits = dense(tape, h, p("out.w"), p("out.b"));
        let log_probs = tape.log_softmax_rows(logits);
        Ok(AsrForward { bound, log_probs })
    }

    /// Evaluation-mode log posteriors.
    pub fn log_posteriors(&self, mel: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let m = tape.constant(mel.clone());
        let fwd = self.forward(&mut tape, m)?;
        Ok(tape.value(fwd.log_probs).clone())
    }

    pub fn log_posteriors_wave(&self, wave: &WaveBuffer) -> Result<Tensor> {
        self.log_posteriors(&self.features(wave)?)
    }
}
