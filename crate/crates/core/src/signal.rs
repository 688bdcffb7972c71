//! Time/frequency conversion shared by every other stage.
//!
//! The analysis/synthesis pair uses square-root periodic Hann windows with
//! `window / 2` reflection padding on both ends, so a signal of `len` samples
//! yields `ceil(len / hop)` frames and `window / 2 + 1` bins. Synthesis divides
//! by the per-sample sum of squared windows, which makes `istft(stft(x)) == x`
//! for any hop that divides the window.
//!
//! Log-mel features follow the recognizer's own framing (400/160 at 16 kHz by
//! default, 512-point FFT, 80 HTK-style triangular bands, `1e-10` floor).

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView1, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Multichannel time-domain audio, one row per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveBuffer {
    pub samples: Array2<f64>,
    pub sample_rate: u32,
}

impl WaveBuffer {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::invalid("wave buffer needs at least one channel"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("wave buffer contains non-finite samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>) -> Self {
        let len = samples.len();
        Self {
            samples: Array2::from_shape_vec((1, len), samples).expect("1 x len"),
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.samples.row(c)
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

/// An `M x F x T` complex STFT tensor together with its framing.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Array3<Complex64>,
    pub window: usize,
    pub hop: usize,
    /// Length in samples of the signal the frames were taken from.
    pub signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn zeros(channels: usize, window: usize, hop: usize, signal_len: usize) -> Self {
        let frames = frame_count(signal_len, hop);
        Self {
            data: Array3::zeros((channels, window / 2 + 1, frames)),
            window,
            hop,
            signal_len,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[2]
    }

    /// Single-channel spectrogram holding only channel `c`.
    pub fn select_channel(&self, c: usize) -> ComplexSpectrogram {
        let data = self
            .data
            .index_axis(Axis(0), c)
            .to_owned()
            .insert_axis(Axis(0));
        ComplexSpectrogram {
            data,
            window: self.window,
            hop: self.hop,
            signal_len: self.signal_len,
        }
    }

    /// The multichannel vector `x_ft`.
    pub fn vector(&self, f: usize, t: usize) -> Vec<Complex64> {
        (0..self.channels()).map(|m| self.data[[m, f, t]]).collect()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Number of STFT frames for a signal of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

pub fn sqrt_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).sqrt())
        .collect()
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Precomputed window and FFT plans for one `(window, hop)` pair.
pub struct StftPlan {
    pub window: usize,
    pub hop: usize,
    win: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("window", &self.window)
            .field("hop", &self.hop)
            .finish()
    }
}

impl StftPlan {
    pub fn new(window: usize, hop: usize) -> Result<Self> {
        if window < 2 || !window.is_power_of_two() {
            return Err(Error::invalid(format!(
                "window {window} must be a power of two"
            )));
        }
        if hop == 0 || window % hop != 0 {
            return Err(Error::invalid(format!(
                "hop {hop} must divide window {window}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            window,
            hop,
            win: sqrt_hann(window),
            fwd: planner.plan_fft_forward(window),
            inv: planner.plan_fft_inverse(window),
        })
    }

    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    fn pad(&self) -> usize {
        self.window / 2
    }

    /// Analysis of one real channel into `frames x bins` (row-major).
    pub fn analyze(&self, x: ArrayView1<'_, f64>) -> Result<Vec<Complex64>> {
        let len = x.len();
        if len < self.window {
            return Err(Error::invalid(format!(
                "signal of {len} samples is shorter than one window ({})",
                self.window
            )));
        }
        let pad = self.pad();
        let frames = frame_count(len, self.hop);
        let reflect = |i: isize| -> f64 {
            let n = len as isize;
            let mut j = i;
            if j < 0 {
                j = -j;
            }
            if j >= n {
                j = 2 * (n - 1) - j;
            }
            x[j as usize]
        };
        let bins = self.bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.window];
        for t in 0..frames {
            let start = (t * self.hop) as isize - pad as isize;
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(self.win[n] * reflect(start + n as isize), 0.0);
            }
            self.fwd.process(&mut buf);
            out.extend_from_slice(&buf[..bins]);
        }
        Ok(out)
    }

    fn irfft_into(&self, spectrum: &[Complex64], buf: &mut [Complex64]) {
        let n = self.window;
        let half = n / 2;
        for k in 0..=half {
            let mut v = spectrum[k];
            if k == 0 || k == half {
                v.im = 0.0;
            }
            buf[k] = v;
            if k != 0 && k != half {
                buf[n - k] = v.conj();
            }
        }
        self.inv.process(buf);
        let scale = 1.0 / n as f64;
        for b in buf.iter_mut() {
            *b *= scale;
        }
    }

    fn synthesis_norm(&self, frames: usize) -> Vec<f64> {
        let total = (frames.saturating_sub(1)) * self.hop + self.window;
        let mut norm = vec![0.0; total];
        for t in 0..frames {
            for n in 0..self.window {
                norm[t * self.hop + n] += self.win[n] * self.win[n];
            }
        }
        norm
    }

    /// Weighted overlap-add of `frames x bins` (row-major) back to `len` samples.
    pub fn synthesize(&self, spec: &[Complex64], frames: usize, len: usize) -> Vec<f64> {
        let bins = self.bins();
        let pad = self.pad();
        let norm = self.synthesis_norm(frames);
        let mut acc = vec![0.0; norm.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.window];
        for t in 0..frames {
            self.irfft_into(&spec[t * bins..(t + 1) * bins], &mut buf);
            for n in 0..self.window {
                acc[t * self.hop + n] += self.win[n] * buf[n].re;
            }
        }
        (0..len)
            .map(|i| {
                let j = i + pad;
                if j < acc.len() && norm[j] > 1e-12 {
                    acc[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Adjoint of [`StftPlan::synthesize`]: maps a gradient on the output
    /// samples to `dL/dRe + i dL/dIm` on each `frames x bins` coefficient.
    pub fn synthesize_adjoint(&self, grad: &[f64], frames: usize) -> Vec<Complex64> {
        let bins = self.bins();
        let pad = self.pad();
        let half = self.window / 2;
        let norm = self.synthesis_norm(frames);
        let mut gpad = vec![0.0; norm.len()];
        for (i, g) in grad.iter().enumerate() {
            let j = i + pad;
            if j < gpad.len() && norm[j] > 1e-12 {
                gpad[j] = g / norm[j];
            }
        }
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.window];
        let inv_n = 1.0 / self.window as f64;
        for t in 0..frames {
            for n in 0..self.window {
                buf[n] = Complex64::new(self.win[n] * gpad[t * self.hop + n], 0.0);
            }
            self.fwd.process(&mut buf);
            for (k, b) in buf.iter().take(bins).enumerate() {
                let edge = k == 0 || k == half;
                let c = if edge { inv_n } else { 2.0 * inv_n };
                out.push(Complex64::new(c * b.re, if edge { 0.0 } else { c * b.im }));
            }
        }
        out
    }
}

pub fn stft(wave: &WaveBuffer, window: usize, hop: usize) -> Result<ComplexSpectrogram> {
    let plan = StftPlan::new(window, hop)?;
    stft_with(&plan, wave)
}

pub fn stft_with(plan: &StftPlan, wave: &WaveBuffer) -> Result<ComplexSpectrogram> {
    let len = wave.len();
    let frames = frame_count(len, plan.hop);
    let bins = plan.bins();
    let mut data = Array3::zeros((wave.channels(), bins, frames));
    for m in 0..wave.channels() {
        let tf = plan.analyze(wave.channel(m))?;
        for t in 0..frames {
            for f in 0..bins {
                data[[m, f, t]] = tf[t * bins + f];
            }
        }
    }
    Ok(ComplexSpectrogram {
        data,
        window: plan.window,
        hop: plan.hop,
        signal_len: len,
    })
}

pub fn istft(spec: &ComplexSpectrogram, window: usize, hop: usize) -> Result<WaveBuffer> {
    if spec.window != window || spec.hop != hop {
        return Err(Error::invalid(format!(
            "spectrogram framed with {}/{} cannot be inverted with {window}/{hop}",
            spec.window, spec.hop
        )));
    }
    let plan = StftPlan::new(window, hop)?;
    istft_with(&plan, spec)
}

pub fn istft_with(plan: &StftPlan, spec: &ComplexSpectrogram) -> Result<WaveBuffer> {
    if spec.bins() != plan.bins() {
        return Err(Error::invalid(format!(
            "spectrogram has {} bins, plan expects {}",
            spec.bins(),
            plan.bins()
        )));
    }
    let (channels, bins, frames) = spec.data.dim();
    let mut out = Array2::zeros((channels, spec.signal_len));
    let mut tf = vec![Complex64::new(0.0, 0.0); frames * bins];
    for m in 0..channels {
        for t in 0..frames {
            for f in 0..bins {
                tf[t * bins + f] = spec.data[[m, f, t]];
            }
        }
        let y = plan.synthesize(&tf, frames, spec.signal_len);
        out.row_mut(m).assign(&ArrayView1::from(&y));
    }
    WaveBuffer::new(out, SAMPLE_RATE)
}

/// Framing and filterbank settings for log-mel features.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LogMelConfig {
    pub win_length: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub floor: f64,
    pub sample_rate: u32,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        Self {
            win_length: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8000.0,
            floor: 1e-10,
            sample_rate: SAMPLE_RATE,
        }
    }
}

impl LogMelConfig {
    /// Frames produced for `len` samples; short inputs are zero-padded to one frame.
    pub fn frames(&self, len: usize) -> usize {
        if len <= self.win_length {
            1
        } else {
            1 + (len - self.win_length) / self.hop
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// `T' x n_mels` log mel energies.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub data: Array2<f64>,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bands(&self) -> usize {
        self.data.ncols()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-style filterbank, `n_mels x (n_fft/2 + 1)`.
pub fn mel_filterbank(cfg: &LogMelConfig) -> Array2<f64> {
    let bins = cfg.bins();
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((cfg.n_mels, bins));
    for b in 0..cfg.n_mels {
        let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..bins {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[[b, k]] = w;
        }
    }
    fb
}

/// Reusable log-mel extractor; also exposes the adjoint used when features
/// sit inside a differentiable chain.
pub struct LogMel {
    pub cfg: LogMelConfig,
    window: Vec<f64>,
    filters: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel").field("cfg", &self.cfg).finish()
    }
}

/// Intermediate values of a log-mel forward pass.
pub struct MelTrace {
    pub spectra: Vec<Complex64>,
    pub energies: Array2<f64>,
    pub log_mel: Array2<f64>,
}

impl LogMel {
    pub fn new(cfg: LogMelConfig) -> Result<Self> {
        if cfg.win_length == 0 || cfg.win_length > cfg.n_fft || cfg.hop == 0 {
            return Err(Error::invalid(format!(
                "bad log-mel framing {}/{} with n_fft {}",
                cfg.win_length, cfg.hop, cfg.n_fft
            )));
        }
        let filters = mel_filterbank(&cfg);
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            window: hann(cfg.win_length),
            filters,
            fft,
            cfg,
        })
    }

    pub fn filters(&self) -> &Array2<f64> {
        &self.filters
    }

    pub fn forward(&self, x: &[f64]) -> Result<MelTrace> {
        if x.is_empty() {
            return Err(Error::invalid("log-mel of an empty wave"));
        }
        let frames = self.cfg.frames(x.len());
        let bins = self.cfg.bins();
        let mut spectra = Vec::with_capacity(frames * bins);
        let mut power = Array2::zeros((frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.cfg.n_fft];
        for t in 0..frames {
            let start = t * self.cfg.hop;
            for (n, b) in buf.iter_mut().enumerate() {
                let v = if n < self.cfg.win_length {
                    x.get(start + n).copied().unwrap_or(0.0) * self.window[n]
                } else {
                    0.0
                };
                *b = Complex64::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..bins {
                power[[t, k]] = buf[k].norm_sqr();
            }
            spectra.extend_from_slice(&buf[..bins]);
        }
        let energies = power.dot(&self.filters.t());
        let floor = self.cfg.floor;
        let log_mel = energies.mapv(|e| e.max(floor).ln());
        Ok(MelTrace {
            spectra,
            energies,
            log_mel,
        })
    }

    /// Gradient on the input samples given a gradient on the log-mel output.
    pub fn backward(&self, trace: &MelTrace, grad: &Array2<f64>, len: usize) -> Vec<f64> {
        let floor = self.cfg.floor;
        let g_energy = ndarray::Zip::from(grad)
            .and(&trace.energies)
            .map_collect(|&g, &e| if e > floor { g / e } else { 0.0 });
        let g_power = g_energy.dot(&self.filters);
        let bins = self.cfg.bins();
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.cfg.n_fft];
        for t in 0..g_power.nrows() {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = if k < bins {
                    trace.spectra[t * bins + k].conj() * g_power[[t, k]]
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            let start = t * self.cfg.hop;
            for n in 0..self.cfg.win_length {
                if let Some(o) = out.get_mut(start + n) {
                    *o += 2.0 * self.window[n] * buf[n].re;
                }
            }
        }
        out
    }
}

pub fn log_mel(wave: &WaveBuffer) -> Result<MelSpectrogram> {
    log_mel_with(wave, &LogMelConfig::default())
}

pub fn log_mel_with(wave: &WaveBuffer, cfg: &LogMelConfig) -> Result<MelSpectrogram> {
    if wave.sample_rate != cfg.sample_rate {
        return Err(Error::invalid(format!(
            "log-mel expects {} Hz, got {}",
            cfg.sample_rate, wave.sample_rate
        )));
    }
    let extractor = LogMel::new(cfg.clone())?;
    let x: Vec<f64> = wave.channel(0).to_vec();
    Ok(MelSpectrogram {
        data: extractor.forward(&x)?.log_mel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_wave_gives_zero_spectrogram() {
        let w = WaveBuffer::mono(vec![0.0; 2048]);
        let s = stft(&w, 512, 128).unwrap();
        assert_eq!(s.bins(), 257);
        assert_eq!(s.frames(), 16);
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
        let back = istft(&s, 512, 128).unwrap();
        assert!(back.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_wave_is_rejected() {
        let w = WaveBuffer::mono(vec![0.0; 100]);
        assert!(matches!(stft(&w, 512, 128), Err(Error::InvalidInput(_))));
        assert!(StftPlan::new(500, 128).is_err());
        assert!(StftPlan::new(512, 100).is_err());
    }

    #[test]
    fn bin_centered_sinusoid_concentrates_energy() {
        // Direct DFT oracle: a sinusoid at bin 20 of a 512-point frame.
        let k0 = 20.0;
        let x: Vec<f64> = (0..4096)
            .map(|n| (2.0 * PI * k0 * n as f64 / 512.0).sin())
            .collect();
        let s = stft(&WaveBuffer::mono(x), 512, 128).unwrap();
        for t in 2..s.frames() - 2 {
            let total: f64 = (0..s.bins()).map(|f| s.data[[0, f, t]].norm_sqr()).sum();
            let near: f64 = (19..=21).map(|f| s.data[[0, f, t]].norm_sqr()).sum();
            assert!(near / total >= 0.99, "frame {t}: {}", near / total);
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let x = noise(5000, 3);
        let w = WaveBuffer::mono(x.clone());
        let s = stft(&w, 512, 128).unwrap();
        let y = istft(&s, 512, 128).unwrap();
        let err = x
            .iter()
            .zip(y.channel(0).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        assert!(matches!(istft(&s, 256, 64), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn single_frame_synthesis_matches_hand_evaluation() {
        let plan = StftPlan::new(16, 4).unwrap();
        let g = noise(16, 9);
        let mut buf: Vec<Complex64> = g.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(16).process(&mut buf);
        let spec = &buf[..9];
        let out = plan.synthesize(spec, 1, 4);
        // one frame: out[n] = w[n+8] * g[n+8] / w[n+8]^2
        let w = sqrt_hann(16);
        for n in 0..4 {
            let expect = g[n + 8] / w[n + 8];
            assert!((out[n] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn synthesis_adjoint_satisfies_inner_product_identity() {
        let plan = StftPlan::new(32, 8).unwrap();
        let len = 70;
        let frames = frame_count(len, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec: Vec<Complex64> = (0..frames * plan.bins())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let g = noise(len, 6);
        let y = plan.synthesize(&spec, frames, len);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let adj = plan.synthesize_adjoint(&g, frames);
        let rhs: f64 = spec
            .iter()
            .zip(&adj)
            .map(|(s, a)| s.re * a.re + s.im * a.im)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn log_mel_of_silence_sits_at_the_floor() {
        let w = WaveBuffer::mono(vec![0.0; 16000]);
        let m = log_mel(&w).unwrap();
        assert_eq!(m.bands(), 80);
        assert_eq!(m.frames(), 1 + (16000 - 400) / 160);
        let f = (1e-10f64).ln();
        assert!(m.data.iter().all(|&v| v == f));
        assert!(log_mel(&WaveBuffer::mono(vec![])).is_err());
    }

    #[test]
    fn log_mel_scaling_shift() {
        let x = noise(8000, 11);
        let a = log_mel(&WaveBuffer::mono(x.clone())).unwrap();
        let b = log_mel(&WaveBuffer::mono(x.iter().map(|v| v * 10.0).collect())).unwrap();
        let floor = (1e-10f64).ln();
        for (p, q) in a.data.iter().zip(b.data.iter()) {
            if *p > floor + 1.0 {
                assert!((q - p - 100f64.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mel_filterbank_shape_and_coverage() {
        let cfg = LogMelConfig::default();
        let fb = mel_filterbank(&cfg);
        assert_eq!(fb.dim(), (80, 257));
        for b in 0..80 {
            assert!(fb.row(b).sum() > 0.0, "band {b} empty");
        }
    }

    #[test]
    fn log_mel_backward_matches_finite_differences() {
        let cfg = LogMelConfig {
            win_length: 12,
            hop: 5,
            n_fft: 16,
            n_mels: 4,
            ..LogMelConfig::default()
        };
        let lm = LogMel::new(cfg).unwrap();
        let x = noise(30, 2);
        let weights = Array2::from_shape_fn((lm.cfg.frames(30), 4), |(t, b)| {
            ((t * 7 + b * 3) % 5) as f64 - 2.0
        });
        let loss = |x: &[f64]| -> f64 { (&lm.forward(x).unwrap().log_mel * &weights).sum() };
        let trace = lm.forward(&x).unwrap();
        let g = lm.backward(&trace, &weights, x.len());
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }
}
