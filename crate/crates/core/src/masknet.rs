//! Direction-aware mask estimator: one bidirectional GRU layer over the
//! flattened per-frame features, dropout, and a logistic output per bin.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dereverb::{wpe, WpeConfig};
use crate::error::{Error, Result};
use crate::features::{assemble, feature_channels, FeatureTensor};
use crate::nn::{dense, dropout_mask, glorot, gru};
use crate::optim::{AdamW, AdamWConfig, LrSchedule};
use crate::params::{Bound, ParameterVector};
use crate::scene::{DirectionTrace, SceneExample, SteeringField};
use crate::signal::ComplexSpectrogram;

/// Mask `Z`, stored `F x T`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatrix {
    pub z: Array2<f64>,
}

impl MaskMatrix {
    pub fn constant(bins: usize, frames: usize, value: f64) -> Self {
        Self {
            z: Array2::from_elem((bins, frames), value),
        }
    }

    /// From the network's `T x F` layout.
    pub fn from_frames(tf: &Array2<f64>) -> Self {
        Self {
            z: tf.t().to_owned(),
        }
    }

    pub fn bins(&self) -> usize {
        self.z.nrows()
    }

    pub fn frames(&self) -> usize {
        self.z.ncols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskNetConfig {
    pub bins: usize,
    pub mics: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl MaskNetConfig {
    pub fn new(bins: usize, mics: usize) -> Self {
        Self {
            bins,
            mics,
            hidden: 64,
            dropout: 0.2,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.bins * feature_channels(self.mics)
    }
}

pub const NORM_SHIFT: &str = "norm.shift";
pub const NORM_SCALE: &str = "norm.scale";
const DIRS: [&str; 2] = ["fw", "bw"];

#[derive(Clone, Debug)]
pub struct MaskEstimator {
    pub cfg: MaskNetConfig,
    pub params: ParameterVector,
}

/// Tape handles of one forward pass.
pub struct MaskForward {
    pub bound: Bound,
    /// `T x F` mask.
    pub z: Var,
}

impl MaskEstimator {
    pub fn new(cfg: MaskNetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, h, f) = (cfg.input_dim(), cfg.hidden, cfg.bins);
        let mut params = ParameterVector::new();
        params.push(NORM_SHIFT, Tensor::zeros((1, n)), false);
        params.push(NORM_SCALE, Tensor::ones((1, n)), false);
        for d in DIRS {
            params.push_uniform(&format!("{d}.w"), n, 3 * h, glorot(n, 3 * h), &mut rng);
            params.push(&format!("{d}.b"), Tensor::zeros((1, 3 * h)), true);
            params.push_uniform(&format!("{d}.u"), h, 3 * h, glorot(h, 3 * h), &mut rng);
            params.push(&format!("{d}.bh"), Tensor::zeros((1, 3 * h)), true);
        }
        params.push_uniform("out.w", 2 * h, f, glorot(2 * h, f), &mut rng);
        params.push("out.b", Tensor::zeros((1, f)), true);
        Self { cfg, params }
    }

    pub fn from_params(cfg: MaskNetConfig, params: ParameterVector) -> Result<Self> {
        let fresh = Self::new(cfg.clone(), 0);
        let same = fresh.params.layout().len() == params.layout().len()
            && fresh
                .params
                .layout()
                .iter()
                .zip(params.layout())
                .all(|(a, b)| a.name == b.name && a.rows == b.rows && a.cols == b.cols);
        if !same {
            return Err(Error::Config("mask checkpoint does not match the configured shape".into()));
        }
        Ok(Self { cfg, params })
    }

    /// Fits the input normalization on the log-power columns of `feats`.
    pub fn fit_normalization(&mut self, feats: &[&FeatureTensor]) {
        let c = feature_channels(self.cfg.mics);
        let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
        for ft in feats {
            for v in ft.data.index_axis(ndarray::Axis(2), 0).iter() {
                sum += v;
                sq += v * v;
                n += 1;
            }
        }
        if n == 0 {
            return;
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).max(1e-12).sqrt();
        let mut shift = Tensor::zeros((1, self.cfg.input_dim()));
        let mut scale = Tensor::ones((1, self.cfg.input_dim()));
        for f in 0..self.cfg.bins {
            shift[[0, f * c]] = mean;
            scale[[0, f * c]] = 1.0 / std;
        }
        let (si, sc) = (self.slice(NORM_SHIFT), self.slice(NORM_SCALE));
        self.params.set(si, &shift);
        self.params.set(sc, &scale);
    }

    fn slice(&self, name: &str) -> usize {
        self.params.index_of(name).expect("mask layout")
    }

    fn normalized(&self, feats: &FeatureTensor) -> Result<Tensor> {
        if feats.bins() != self.cfg.bins || feats.channels() != feature_channels(self.cfg.mics) {
            return Err(Error::invalid(format!(
                "features {}x{} do not match estimator {}x{}",
                feats.bins(),
                feats.channels(),
                self.cfg.bins,
                feature_channels(self.cfg.mics)
            )));
        }
        let x = feats.flattened();
        let shift = self.params.view(self.slice(NORM_SHIFT));
        let scale = self.params.view(self.slice(NORM_SCALE));
        Ok((x - &shift) * &scale)
    }

    /// Records the estimator on `tape`. `dropout` carries the RNG for
    /// training mode; `None` is evaluation mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        feats: &FeatureTensor,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<MaskForward> {
        let x = self.normalized(feats)?;
        let bound = self.params.bind(tape);
        let p = |name: &str| bound.var(self.slice(name));
        let xv = tape.constant(x);
        let mut outs = Vec::new();
        for d in DIRS {
            let input = if d == "bw" { tape.flip_rows(xv) } else { xv };
            let proj = dense(tape, input, p(&format!("{d}.w")), p(&format!("{d}.b")));
            let h = gru(tape, proj, p(&format!("{d}.u")), p(&format!("{d}.bh")));
            outs.push(if d == "bw" { tape.flip_rows(h) } else { h });
        }
        let mut h = tape.concat_cols(outs[0], outs[1]);
        if let Some(rng) = dropout {
            if self.cfg.dropout > 0.0 {
                let shape = tape.value(h).dim();
                h = tape.mul_const(h, dropout_mask(shape, self.cfg.dropout, rng));
            }
        }
        let logits = dense(tape, h, p("out.w"), p("out.b"));
        let z = tape.sigmoid(logits);
        Ok(MaskForward { bound, z })
    }

    /// Evaluation-mode mask.
    pub fn estimate(&self, feats: &FeatureTensor) -> Result<MaskMatrix> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, feats, None)?;
        Ok(MaskMatrix::from_frames(tape.value(fwd.z)))
    }

    /// Names of trainable slices (everything except the normalization).
    pub fn is_weight(name: &str) -> bool {
        !name.starts_with("norm.")
    }
}

/// Reference magnitude `|x|` and phase-sensitive target
/// `|s| max(0, cos(angle x - angle s))`, both `T x F`.
pub fn psm_terms(x_ref: &ComplexSpectrogram, s_ref: &ComplexSpectrogram) -> Result<(Tensor, Tensor)> {
    if x_ref.bins() != s_ref.bins() || x_ref.frames() != s_ref.frames() {
        return Err(Error::invalid("psm: mixture and target shapes differ"));
    }
    let (f, t) = (x_ref.bins(), x_ref.frames());
    let mut mag = Tensor::zeros((t, f));
    let mut target = Tensor::zeros((t, f));
    for ti in 0..t {
        for fi in 0..f {
            let x = x_ref.data[[0, fi, ti]];
            let s = s_ref.data[[0, fi, ti]];
            mag[[ti, fi]] = x.norm();
            let cos = if x.norm() == 0.0 || s.norm() == 0.0 {
                0.0
            } else {
                (x * s.conj()).re / (x.norm() * s.norm())
            };
            target[[ti, fi]] = s.norm() * cos.max(0.0);
        }
    }
    Ok((mag, target))
}

/// `sum (z |x| - target)^2` recorded on the tape; `z` is `T x F`.
pub fn psm_loss_var(tape: &mut Tape, z: Var, mag: &Tensor, target: &Tensor) -> Var {
    let zx = tape.mul_const(z, mag.clone());
    let neg = target.mapv(|v| -v);
    let d = tape.add_const(zx, &neg);
    let sq = tape.square(d);
    tape.sum(sq)
}

/// Plain evaluation of the phase-sensitive loss for an `F x T` mask.
pub fn psm_loss(z: &MaskMatrix, x_ref: &ComplexSpectrogram, s_ref: &ComplexSpectrogram) -> Result<f64> {
    let (mag, target) = psm_terms(x_ref, s_ref)?;
    if z.z.t().dim() != mag.dim() {
        return Err(Error::invalid("psm: mask shape differs"));
    }
    Ok(z.z
        .t()
        .iter()
        .zip(mag.iter().zip(target.iter()))
        .map(|(z, (m, s))| (z * m - s).powi(2))
        .sum())
}

/// One training pair for the estimator.
#[derive(Clone, Debug)]
pub struct MaskExample {
    pub features: FeatureTensor,
    pub mag: Tensor,
    pub target: Tensor,
}

/// Front end shared by training and enhancement: optional WPE, then
/// features of the (dereverberated) mixture.
pub fn front_end(
    x: &ComplexSpectrogram,
    field: &SteeringField,
    trace: &DirectionTrace,
    reference: usize,
    wpe_cfg: Option<&WpeConfig>,
) -> Result<(ComplexSpectrogram, FeatureTensor)> {
    let y = match wpe_cfg {
        Some(c) => wpe(x, c)?,
        None => x.clone(),
    };
    let feats = assemble(&y, field, trace, reference)?;
    Ok((y, feats))
}

pub fn mask_example(
    scene: &SceneExample,
    field: &SteeringField,
    reference: usize,
    wpe_cfg: Option<&WpeConfig>,
) -> Result<MaskExample> {
    let (y, features) = front_end(&scene.mixture, field, &scene.trace, reference, wpe_cfg)?;
    let (mag, target) = psm_terms(&y.select_channel(reference), &scene.clean_target)?;
    Ok(MaskExample {
        features,
        mag,
        target,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub optimizer: AdamWConfig,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for MaskTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            schedule: LrSchedule::ExpDecay {
                base: 0.001,
                factor: 0.96,
            },
            optimizer: AdamWConfig::default(),
            hidden: 64,
            dropout: 0.2,
        }
    }
}

/// Per-epoch mean of the per-cell loss.
pub type LossCurve = Vec<f64>;

pub fn train_mask(
    data: &[MaskExample],
    cfg: &MaskTrainConfig,
    seed: u64,
) -> Result<(MaskEstimator, LossCurve)> {
    let first = data
        .first()
        .ok_or_else(|| Error::Data("mask training set is empty".into()))?;
    let net_cfg = MaskNetConfig {
        bins: first.features.bins(),
        mics: first.features.mics,
        hidden: cfg.hidden,
        dropout: cfg.dropout,
    };
    let mut net = MaskEstimator::new(net_cfg, seed);
    net.fit_normalization(&data.iter().map(|e| &e.features).collect::<Vec<_>>());
    net.params.set_trainable(MaskEstimator::is_weight);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_736b);
    let mut opt = AdamW::new(cfg.optimizer.clone(), net.params.len());
    let batch = cfg.batch_size.max(1);
    let batches = data.len().div_ceil(batch);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut cells = 0usize;
        for (bi, chunk) in order.chunks(batch).enumerate() {
            net.params.zero_grads();
            let mut batch_cells = 0usize;
            for &i in chunk {
                let ex = &data[i];
                let mut tape = Tape::new();
                let fwd = net.forward(&mut tape, &ex.features, Some(&mut rng))?;
                let loss = psm_loss_var(&mut tape, fwd.z, &ex.mag, &ex.target);
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite mask loss on example {i}"),
                    });
                }
                total += value;
                cells += ex.mag.len();
                batch_cells += ex.mag.len();
                let grads = tape.backward(loss)?;
                net.params.accumulate(&fwd.bound, &grads);
            }
            net.params.scale_grads(1.0 / batch_cells.max(1) as f64);
            opt.step(&mut net.params, cfg.schedule.rate(epoch, bi, batches));
            if !net.params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite mask parameters".into(),
                });
            }
        }
        curve.push(total / cells.max(1) as f64);
    }
    Ok((net, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::max_rel_error;
    use ndarray::Array3;
    use num_complex::Complex64;
    use rand::Rng;

    fn toy_features(t: usize, f: usize, m: usize, seed: u64) -> FeatureTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureTensor {
            data: Array3::from_shape_fn((t, f, feature_channels(m)), |_| rng.gen_range(-1.0..1.0)),
            mics: m,
        }
    }

    fn toy_spec(f: usize, t: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexSpectrogram {
            data: Array3::from_shape_fn((1, f, t), |_| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            }),
            window: 2 * (f - 1),
            hop: 1,
            signal_len: t,
        }
    }

    fn tiny() -> MaskNetConfig {
        MaskNetConfig {
            bins: 5,
            mics: 2,
            hidden: 3,
            dropout: 0.2,
        }
    }

    #[test]
    fn outputs_in_unit_interval_and_deterministic() {
        let net = MaskEstimator::new(tiny(), 1);
        let ft = toy_features(4, 5, 2, 2);
        let a = net.estimate(&ft).unwrap();
        assert_eq!((a.bins(), a.frames()), (5, 4));
        assert!(a.z.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(net.estimate(&ft).unwrap(), a);
        assert!(net.estimate(&toy_features(4, 6, 2, 2)).is_err());
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let mut net = MaskEstimator::new(tiny(), 1);
        let mask = net.params.trainable_mask();
        for (v, m) in net.params.values_mut().iter_mut().zip(mask) {
            if m {
                *v = 0.0;
            }
        }
        let z = net.estimate(&toy_features(4, 5, 2, 3)).unwrap();
        assert!(z.z.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn psm_cell_examples() {
        let mut x = toy_spec(1, 1, 0);
        let mut s = toy_spec(1, 1, 0);
        x.data[[0, 0, 0]] = Complex64::new(2.0, 0.0);
        s.data[[0, 0, 0]] = Complex64::new(1.0, 0.0);
        assert_eq!(psm_loss(&MaskMatrix::constant(1, 1, 0.5), &x, &s).unwrap(), 0.0);
        x.data[[0, 0, 0]] = Complex64::new(1.0, 0.0);
        s.data[[0, 0, 0]] = Complex64::new(-1.0, 0.0);
        assert_eq!(psm_loss(&MaskMatrix::constant(1, 1, 1.0), &x, &s).unwrap(), 1.0);
    }

    #[test]
    fn psm_matches_scalar_loop() {
        let (f, t) = (7, 6);
        let x = toy_spec(f, t, 4);
        let s = toy_spec(f, t, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = MaskMatrix {
            z: Array2::from_shape_fn((f, t), |_| rng.gen_range(0.0..1.0)),
        };
        let mut naive = 0.0;
        for fi in 0..f {
            for ti in 0..t {
                let xv = x.data[[0, fi, ti]];
                let sv = s.data[[0, fi, ti]];
                let delta = xv.arg() - sv.arg();
                let tgt = sv.norm() * delta.cos().max(0.0);
                naive += (z.z[[fi, ti]] * xv.norm() - tgt).powi(2);
            }
        }
        let fast = psm_loss(&z, &x, &s).unwrap();
        assert!((fast - naive).abs() < 1e-12 * naive.max(1.0), "{fast} vs {naive}");
        // tape version agrees
        let (mag, target) = psm_terms(&x, &s).unwrap();
        let mut tape = Tape::new();
        let zv = tape.leaf(z.z.t().to_owned());
        let l = psm_loss_var(&mut tape, zv, &mag, &target);
        assert!((tape.scalar(l) - naive).abs() < 1e-12 * naive.max(1.0));
    }

    #[test]
    fn gradients_match_central_differences_for_all_groups() {
        let net = MaskEstimator::new(tiny(), 7);
        let ft = toy_features(4, 5, 2, 8);
        let (mag, target) = psm_terms(&toy_spec(5, 4, 9), &toy_spec(5, 4, 10)).unwrap();
        let x = net.normalized(&ft).unwrap();
        let names = ["fw.w", "fw.b", "fw.u", "fw.bh", "bw.w", "bw.b", "bw.u", "bw.bh", "out.w", "out.b"];
        let inputs: Vec<Tensor> = names.iter().map(|n| net.params.tensor(net.slice(n))).collect();
        let err = max_rel_error(&inputs, 1e-4, 1e-8, &|tape, v| {
            let xv = tape.constant(x.clone());
            let mut outs = Vec::new();
            for (k, d) in ["fw", "bw"].iter().enumerate() {
                let input = if *d == "bw" { tape.flip_rows(xv) } else { xv };
                let proj = dense(tape, input, v[4 * k], v[4 * k + 1]);
                let h = gru(tape, proj, v[4 * k + 2], v[4 * k + 3]);
                outs.push(if *d == "bw" { tape.flip_rows(h) } else { h });
            }
            let h = tape.concat_cols(outs[0], outs[1]);
            let logits = dense(tape, h, v[8], v[9]);
            let z = tape.sigmoid(logits);
            psm_loss_var(tape, z, &mag, &target)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn doubled_loss_doubles_gradients() {
        let net = MaskEstimator::new(tiny(), 11);
        let ft = toy_features(4, 5, 2, 12);
        let (mag, target) = psm_terms(&toy_spec(5, 4, 13), &toy_spec(5, 4, 14)).unwrap();
        let grads = |k: f64| {
            let mut tape = Tape::new();
            let fwd = net.forward(&mut tape, &ft, None).unwrap();
            let l = psm_loss_var(&mut tape, fwd.z, &mag, &target);
            let l = tape.scale(l, k);
            let g = tape.backward(l).unwrap();
            let mut p = net.params.clone();
            p.zero_grads();
            p.accumulate(&fwd.bound, &g);
            p.grads().to_vec()
        };
        let (a, b) = (grads(1.0), grads(2.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn overfits_one_example_and_is_deterministic() {
        // realizable target: s = z* x with z* in (0, 1)
        let x = toy_spec(5, 6, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut s = x.clone();
        s.data.mapv_inplace(|v| v * rng.gen_range(0.05..0.95));
        let (mag, target) = psm_terms(&x, &s).unwrap();
        let ex = MaskExample {
            features: toy_features(6, 5, 2, 15),
            mag,
            target,
        };
        let cfg = MaskTrainConfig {
            epochs: 50,
            batch_size: 1,
            hidden: 8,
            dropout: 0.0,
            schedule: LrSchedule::ExpDecay {
                base: 0.01,
                factor: 0.96,
            },
            ..MaskTrainConfig::default()
        };
        let data = vec![ex];
        let (a, curve) = train_mask(&data, &cfg, 3).unwrap();
        assert!(curve[49] < 0.5 * curve[0], "{curve:?}");
        let (b, _) = train_mask(&data, &cfg, 3).unwrap();
        assert!(a.params.bit_identical(&b.params));
        assert!(matches!(train_mask(&[], &cfg, 3), Err(Error::Data(_))));
    }
}
