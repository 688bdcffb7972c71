//! Signal transforms as tape operations.
//!
//! Complex tensors on the tape are packed as real matrices with the real
//! parts in the left half of the columns and the imaginary parts in the
//! right half. Gradients of packed tensors follow the same layout, which
//! is `dL/dRe + i dL/dIm` once unpacked.

use std::sync::Arc;

use num_complex::Complex64;

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::signal::{LogMel, MelTrace, StftPlan};

/// Packs a `rows x cols` complex matrix given as a closure.
pub fn pack(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Complex64) -> Tensor {
    let mut out = Tensor::zeros((rows, 2 * cols));
    for i in 0..rows {
        for j in 0..cols {
            let v = f(i, j);
            out[[i, j]] = v.re;
            out[[i, cols + j]] = v.im;
        }
    }
    out
}

pub fn unpack(t: &Tensor, i: usize, j: usize) -> Complex64 {
    let cols = t.ncols() / 2;
    Complex64::new(t[[i, j]], t[[i, cols + j]])
}

/// Overlap-add synthesis of a packed `T x 2F` spectrum into `1 x len`.
pub fn istft_op(tape: &mut Tape, spec: Var, plan: Arc<StftPlan>, len: usize) -> Var {
    let s = tape.value(spec);
    let frames = s.nrows();
    let bins = s.ncols() / 2;
    assert_eq!(bins, plan.bins(), "istft_op: bin count");
    let flat: Vec<Complex64> = (0..frames)
        .flat_map(|t| (0..bins).map(move |f| (t, f)))
        .map(|(t, f)| unpack(s, t, f))
        .collect();
    let y = plan.synthesize(&flat, frames, len);
    let value = Tensor::from_shape_vec((1, len), y).expect("1 x len");
    tape.custom(Box::new(IstftOp { plan, frames }), vec![spec], value)
}

struct IstftOp {
    plan: Arc<StftPlan>,
    frames: usize,
}

impl CustomOp for IstftOp {
    fn name(&self) -> &'static str {
        "istft"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let g: Vec<f64> = grad.iter().copied().collect();
        let adj = self.plan.synthesize_adjoint(&g, self.frames);
        let bins = self.plan.bins();
        vec![pack(self.frames, bins, |t, f| adj[t * bins + f])]
    }
}

/// Log-mel features of a `1 x len` waveform, `T' x n_mels`.
pub fn log_mel_op(tape: &mut Tape, wave: Var, mel: Arc<LogMel>) -> Result<Var> {
    let w = tape.value(wave);
    if w.nrows() != 1 {
        return Err(Error::invalid("log_mel_op expects a single-row waveform"));
    }
    let x: Vec<f64> = w.iter().copied().collect();
    let trace = mel.forward(&x)?;
    let value = trace.log_mel.clone();
    let op = LogMelOp {
        mel,
        trace,
        len: x.len(),
    };
    Ok(tape.custom(Box::new(op), vec![wave], value))
}

struct LogMelOp {
    mel: Arc<LogMel>,
    trace: MelTrace,
    len: usize,
}

impl CustomOp for LogMelOp {
    fn name(&self) -> &'static str {
        "log_mel"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let g = self.mel.backward(&self.trace, grad, self.len);
        vec![Tensor::from_shape_vec((1, self.len), g).expect("1 x len")]
    }
}
