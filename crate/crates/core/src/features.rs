//! Mask-estimator inputs: reference log power, inter-channel phase
//! differences and directional features from the steering field.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::scene::{DirectionTrace, SteeringField};
use crate::signal::ComplexSpectrogram;

pub const LOG_FLOOR: f64 = 1e-10;

/// `T x F x C` features with channel order
/// `[log power, sin P (M-1), cos P (M-1), sin D (M-1), cos D (M-1)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub data: Array3<f64>,
    pub mics: usize,
}

impl FeatureTensor {
    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    /// Frames as rows of length `F * C` (bin-major).
    pub fn flattened(&self) -> Array2<f64> {
        let (t, f, c) = self.data.dim();
        self.data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t, f * c))
            .expect("contiguous")
    }
}

pub fn feature_channels(mics: usize) -> usize {
    4 * (mics - 1) + 1
}

fn check_reference(x: &ComplexSpectrogram, r: usize) -> Result<()> {
    if r >= x.channels() {
        return Err(Error::invalid(format!(
            "reference {r} out of range for {} channels",
            x.channels()
        )));
    }
    Ok(())
}

fn others(m: usize, r: usize) -> impl Iterator<Item = usize> {
    (0..m).filter(move |&c| c != r)
}

/// `log(|x_ftr|^2 + floor)`, `T x F`.
pub fn log_power_ref(x: &ComplexSpectrogram, r: usize) -> Result<Array2<f64>> {
    check_reference(x, r)?;
    Ok(Array2::from_shape_fn((x.frames(), x.bins()), |(t, f)| {
        (x.data[[r, f, t]].norm_sqr() + LOG_FLOOR).ln()
    }))
}

/// `angle(x_ftm / x_ftr)` for the non-reference mics, `T x F x (M-1)`.
/// A zero reference (or zero channel) gives 0.
pub fn ipd(x: &ComplexSpectrogram, r: usize) -> Result<Array3<f64>> {
    check_reference(x, r)?;
    let m = x.channels();
    if m < 2 {
        return Err(Error::invalid("ipd needs at least two microphones"));
    }
    let mut out = Array3::zeros((x.frames(), x.bins(), m - 1));
    for (k, c) in others(m, r).enumerate() {
        for f in 0..x.bins() {
            for t in 0..x.frames() {
                let xr = x.data[[r, f, t]];
                let xm = x.data[[c, f, t]];
                out[[t, f, k]] = if xr.norm_sqr() == 0.0 || xm.norm_sqr() == 0.0 {
                    0.0
                } else {
                    wrap((xm * xr.conj()).arg())
                };
            }
        }
    }
    Ok(out)
}

/// Maps `-pi` onto `pi` so angles lie in `(-pi, pi]`.
fn wrap(a: f64) -> f64 {
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// `angle(a_ftm / a_ftr)` of the active direction per frame.
pub fn directional(
    field: &SteeringField,
    trace: &DirectionTrace,
    r: usize,
) -> Result<Array3<f64>> {
    let idx = trace.indices()?;
    let m = field.channels();
    if r >= m {
        return Err(Error::invalid("reference out of range for steering field"));
    }
    if trace.num_directions != field.num_directions() {
        return Err(Error::invalid("trace and steering field disagree on D"));
    }
    let bins = field.bins();
    let mut out = Array3::zeros((idx.len(), bins, m - 1));
    for (t, &d) in idx.iter().enumerate() {
        for f in 0..bins {
            let ar = field.vectors[[d, f, r]];
            for (k, c) in others(m, r).enumerate() {
                out[[t, f, k]] = wrap((field.vectors[[d, f, c]] * ar.conj()).arg());
            }
        }
    }
    Ok(out)
}

pub fn assemble(
    x: &ComplexSpectrogram,
    field: &SteeringField,
    trace: &DirectionTrace,
    r: usize,
) -> Result<FeatureTensor> {
    let m = x.channels();
    if field.channels() != m || field.bins() != x.bins() || trace.frames() != x.frames() {
        return Err(Error::invalid("features: mixture, field and trace shapes disagree"));
    }
    let lp = log_power_ref(x, r)?;
    let p = ipd(x, r)?;
    let d = directional(field, trace, r)?;
    let (frames, bins, k) = p.dim();
    let mut data = Array3::zeros((frames, bins, feature_channels(m)));
    for t in 0..frames {
        for f in 0..bins {
            data[[t, f, 0]] = lp[[t, f]];
            for j in 0..k {
                let (sp, cp) = p[[t, f, j]].sin_cos();
                let (sd, cd) = d[[t, f, j]].sin_cos();
                data[[t, f, 1 + j]] = sp;
                data[[t, f, 1 + k + j]] = cp;
                data[[t, f, 1 + 2 * k + j]] = sd;
                data[[t, f, 1 + 3 * k + j]] = cd;
            }
        }
    }
    Ok(FeatureTensor { data, mics: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::geometry::{bin_frequencies, steering_vector, ArrayGeometry};
    use crate::scene::{build_steering_field, desk_field};
    use ndarray::Array3;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn spec(data: Array3<Complex64>) -> ComplexSpectrogram {
        let bins = data.shape()[1];
        let frames = data.shape()[2];
        ComplexSpectrogram {
            data,
            window: 2 * (bins - 1),
            hop: (bins - 1) / 2,
            signal_len: frames,
        }
    }

    #[test]
    fn log_power_examples() {
        let mut d = Array3::zeros((2, 3, 2));
        d[[0, 0, 0]] = Complex64::new(0.0, 1.0);
        let x = spec(d);
        let lp = log_power_ref(&x, 0).unwrap();
        assert!((lp[[0, 0]] - (1.0 + LOG_FLOOR).ln()).abs() < 1e-15);
        assert_eq!(lp[[1, 2]], LOG_FLOOR.ln());
        let mut big = x.clone();
        big.data.mapv_inplace(|c| c * 10.0);
        let lb = log_power_ref(&big, 0).unwrap();
        assert!((lb[[0, 0]] - lp[[0, 0]] - 100f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn ipd_examples() {
        let mut d = Array3::zeros((4, 1, 1));
        d[[0, 0, 0]] = Complex64::new(1.0, 0.0);
        d[[1, 0, 0]] = Complex64::new(1.0, 0.0);
        d[[2, 0, 0]] = Complex64::new(0.0, 1.0);
        d[[3, 0, 0]] = Complex64::from_polar(1.0, PI / 4.0);
        let p = ipd(&spec(d), 0).unwrap();
        assert_eq!(p[[0, 0, 0]], 0.0);
        assert!((p[[0, 0, 1]] - PI / 2.0).abs() < 1e-15);
        assert!((p[[0, 0, 2]] - PI / 4.0).abs() < 1e-15);
        let z = ipd(&spec(Array3::zeros((2, 1, 1))), 0).unwrap();
        assert_eq!(z[[0, 0, 0]], 0.0);
        let mut opp = Array3::zeros((2, 1, 1));
        opp[[0, 0, 0]] = Complex64::new(1.0, 0.0);
        opp[[1, 0, 0]] = Complex64::new(-1.0, -0.0);
        assert_eq!(ipd(&spec(opp), 0).unwrap()[[0, 0, 0]], PI);
    }

    #[test]
    fn channel_count_matches_mics() {
        assert_eq!(feature_channels(4), 13);
        assert_eq!(feature_channels(2), 5);
        let g = ArrayGeometry::headset();
        let field = desk_field(&g, 16);
        let x = spec(Array3::from_elem((4, 9, 3), Complex64::new(1.0, 0.5)));
        let tr = DirectionTrace::constant(field.num_directions(), 5, 3);
        assert_eq!(assemble(&x, &field, &tr, 0).unwrap().channels(), 13);
    }

    #[test]
    fn identical_channels_broadside_give_zero_sin_unit_cos() {
        let g = ArrayGeometry::new(vec![[-0.05, 0.0, 0.0], [0.05, 0.0, 0.0]], 0).unwrap();
        let field = build_steering_field(&g, &[0.0], &[0.0], 16, 16000).unwrap();
        let x = spec(Array3::from_shape_fn((2, 9, 4), |(_, f, t)| {
            Complex64::from_polar(1.0 + f as f64, 0.3 * t as f64)
        }));
        let tr = DirectionTrace::constant(1, 0, 4);
        let ft = assemble(&x, &field, &tr, 0).unwrap();
        for t in 0..4 {
            for f in 0..9 {
                assert!(ft.data[[t, f, 1]].abs() < 1e-15 && ft.data[[t, f, 3]].abs() < 1e-15);
                assert!((ft.data[[t, f, 2]] - 1.0).abs() < 1e-15);
                assert!((ft.data[[t, f, 4]] - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn directional_switches_exactly_at_switch_frame() {
        let g = ArrayGeometry::headset();
        let field = desk_field(&g, 32);
        let idx = [3, 3, 3, 40, 40];
        let tr = DirectionTrace::from_indices(field.num_directions(), &idx);
        let d = directional(&field, &tr, 0).unwrap();
        let freqs = bin_frequencies(32, 16000);
        for (t, &dir) in idx.iter().enumerate() {
            for (f, &hz) in freqs.iter().enumerate() {
                let a = steering_vector(&g, field.directions[dir], hz);
                for k in 0..3 {
                    let expect = (a[k + 1] / a[0]).arg();
                    let diff = (d[[t, f, k]] - expect).rem_euclid(2.0 * PI);
                    assert!(diff.min(2.0 * PI - diff) < 1e-9);
                }
            }
        }
        let mut gaps = tr.clone();
        gaps.active[1] = None;
        assert!(matches!(directional(&field, &gaps, 0), Err(Error::InvalidInput(_))));
    }

    proptest! {
        #[test]
        fn unit_circle_and_phase_invariance(seed in 0u64..1000, phase in -3.0f64..3.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = ArrayGeometry::headset();
            let field = desk_field(&g, 16);
            let x = spec(Array3::from_shape_fn((4, 9, 5), |_| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            }));
            let idx: Vec<usize> = (0..5).map(|_| rng.gen_range(0..field.num_directions())).collect();
            let tr = DirectionTrace::from_indices(field.num_directions(), &idx);
            let a = assemble(&x, &field, &tr, 0).unwrap();
            for t in 0..5 {
                for f in 0..9 {
                    for j in 0..3 {
                        let s = a.data[[t, f, 1 + j]];
                        let c = a.data[[t, f, 4 + j]];
                        prop_assert!((s * s + c * c - 1.0).abs() < 1e-12);
                    }
                }
            }
            let mut rot = x.clone();
            rot.data.mapv_inplace(|v| v * Complex64::from_polar(1.0, phase));
            let b = assemble(&rot, &field, &tr, 0).unwrap();
            for (u, v) in a.data.iter().zip(b.data.iter()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
