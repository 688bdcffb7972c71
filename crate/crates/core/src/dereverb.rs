//! Weighted prediction error (WPE) dereverberation in the STFT domain.
//!
//! For every frequency the late reverberation of frame `t` is predicted
//! from frames `t - delay - taps + 1 ..= t - delay` of all channels and
//! subtracted; prediction filters are re-estimated with variance weights
//! taken from the current output.

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve, CMat};
use crate::signal::ComplexSpectrogram;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WpeConfig {
    pub taps: usize,
    pub delay: usize,
    pub iterations: usize,
    /// Diagonal loading relative to the mean diagonal of the correlation.
    pub loading: f64,
    pub variance_floor: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            taps: 16,
            delay: 2,
            iterations: 3,
            loading: 1e-10,
            variance_floor: 1e-10,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 || self.delay == 0 || self.iterations == 0 {
            return Err(Error::Config("wpe taps, delay and iterations must be >= 1".into()));
        }
        if !(self.loading > 0.0) || !(self.variance_floor > 0.0) {
            return Err(Error::Config("wpe loading and floor must be positive".into()));
        }
        Ok(())
    }

    /// First frame whose prediction is applied; earlier frames pass through.
    pub fn first_filtered_frame(&self) -> usize {
        self.delay + self.taps + 1
    }
}

pub fn wpe(spec: &ComplexSpectrogram, cfg: &WpeConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let (_, bins, frames) = spec.data.dim();
    if frames <= cfg.taps + cfg.delay {
        return Err(Error::invalid(format!(
            "wpe needs more than {} frames, got {frames}",
            cfg.taps + cfg.delay
        )));
    }
    let mut out = spec.clone();
    for f in 0..bins {
        let y = spec.data.slice(s![.., f, ..]);
        let z = wpe_bin(y, cfg)?;
        out.data.slice_mut(s![.., f, ..]).assign(&z);
    }
    Ok(out)
}

/// WPE on one frequency bin, `M x T`.
pub fn wpe_bin(y: ArrayView2<'_, Complex64>, cfg: &WpeConfig) -> Result<Array2<Complex64>> {
    let (m, frames) = y.dim();
    let k = cfg.taps;
    let dim = m * k;
    let start = cfg.first_filtered_frame();
    let mut z = y.to_owned();
    if start >= frames || y.iter().all(|v| v.norm_sqr() == 0.0) {
        return Ok(z);
    }
    // stacked past observations for frame t
    let stack = |t: usize| -> Vec<Complex64> {
        let mut v = Vec::with_capacity(dim);
        for tap in 0..k {
            let src = t - cfg.delay - tap;
            for c in 0..m {
                v.push(y[[c, src]]);
            }
        }
        v
    };
    let stacks: Vec<Vec<Complex64>> = (start..frames).map(stack).collect();
    for _ in 0..cfg.iterations {
        let mut r = CMat::zeros((dim, dim));
        let mut p = CMat::zeros((dim, m));
        for (i, t) in (start..frames).enumerate() {
            let lam = ((0..m).map(|c| z[[c, t]].norm_sqr()).sum::<f64>() / m as f64)
                .max(cfg.variance_floor);
            let w = 1.0 / lam;
            let yt = &stacks[i];
            for a in 0..dim {
                let ya = yt[a] * w;
                for b in a..dim {
                    r[[a, b]] += ya * yt[b].conj();
                }
                for c in 0..m {
                    p[[a, c]] += ya * y[[c, t]].conj();
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                r[[a, b]] = r[[b, a]].conj();
            }
        }
        let load = cfg.loading * (0..dim).map(|a| r[[a, a]].re).sum::<f64>() / dim as f64;
        for a in 0..dim {
            r[[a, a]] += load.max(f64::MIN_POSITIVE);
        }
        let g = solve(&r, &p)?;
        for (i, t) in (start..frames).enumerate() {
            let yt = &stacks[i];
            for c in 0..m {
                let mut pred = Complex64::new(0.0, 0.0);
                for a in 0..dim {
                    pred += g[[a, c]].conj() * yt[a];
                }
                z[[c, t]] = y[[c, t]] - pred;
            }
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn spec_from(data: Array3<Complex64>) -> ComplexSpectrogram {
        let frames = data.shape()[2];
        ComplexSpectrogram {
            window: 2 * (data.shape()[1] - 1),
            hop: 1,
            signal_len: frames,
            data,
        }
    }

    fn cgauss(rng: &mut ChaCha8Rng) -> Complex64 {
        let n = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
        Complex64::new(n.sample(rng), n.sample(rng))
    }

    #[test]
    fn zero_in_zero_out() {
        let x = spec_from(Array3::zeros((2, 3, 40)));
        assert_eq!(wpe(&x, &WpeConfig::default()).unwrap(), x);
    }

    #[test]
    fn too_few_frames_rejected() {
        let x = spec_from(Array3::zeros((2, 3, 18)));
        assert!(matches!(wpe(&x, &WpeConfig::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn white_noise_is_nearly_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = spec_from(Array3::from_shape_fn((2, 2, 3000), |_| cgauss(&mut rng)));
        let y = wpe(&x, &WpeConfig::default()).unwrap();
        let diff: f64 = (&y.data - &x.data).iter().map(|c| c.norm_sqr()).sum();
        let rel = (diff / x.energy()).sqrt();
        assert!(rel < 0.15, "{rel}");
    }

    #[test]
    fn reverberant_tail_is_suppressed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, frames) = (2, 600);
        let mut data = Array3::zeros((m, 1, frames));
        // exponentially decaying tail: y_t = s_t + rho_c y_{t-1}
        let rho: Vec<Complex64> = (0..m)
            .map(|c| Complex64::from_polar(0.85, 0.7 + 1.3 * c as f64))
            .collect();
        // bursts of 20 frames followed by 40 frames of silence
        let burst = |t: usize| t % 60 < 20;
        let src: Vec<Complex64> = (0..frames)
            .map(|t| if burst(t) { cgauss(&mut rng) } else { Complex64::new(0.0, 0.0) })
            .collect();
        for c in 0..m {
            let mut prev = Complex64::new(0.0, 0.0);
            for t in 0..frames {
                prev = src[t] + rho[c] * prev;
                data[[c, 0, t]] = prev;
            }
        }
        let x = spec_from(data);
        let y = wpe(&x, &WpeConfig::default()).unwrap();
        let tail = |s: &ComplexSpectrogram| -> f64 {
            (60..frames)
                .filter(|&t| !burst(t))
                .map(|t| (0..m).map(|c| s.data[[c, 0, t]].norm_sqr()).sum::<f64>())
                .sum()
        };
        let reduction = 10.0 * (tail(&x) / tail(&y)).log10();
        assert!(reduction >= 3.0, "{reduction} dB");
    }

    #[test]
    fn early_frames_pass_and_bins_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = spec_from(Array3::from_shape_fn((2, 3, 80), |_| cgauss(&mut rng)));
        let cfg = WpeConfig::default();
        let y = wpe(&x, &cfg).unwrap();
        for t in 0..cfg.first_filtered_frame() {
            for f in 0..3 {
                for c in 0..2 {
                    assert_eq!(y.data[[c, f, t]], x.data[[c, f, t]]);
                }
            }
        }
        let mut perm = x.clone();
        for f in 0..3 {
            perm.data
                .slice_mut(s![.., f, ..])
                .assign(&x.data.slice(s![.., 2 - f, ..]));
        }
        let yp = wpe(&perm, &cfg).unwrap();
        for f in 0..3 {
            assert_eq!(yp.data.slice(s![.., f, ..]), y.data.slice(s![.., 2 - f, ..]));
        }
        assert_eq!(wpe(&x, &cfg).unwrap(), y);
    }
}
