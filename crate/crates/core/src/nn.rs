//! Recurrent and convolutional building blocks recorded on the tape.

use ndarray::s;
use rand::Rng;

use crate::autodiff::{sigmoid_scalar, CustomOp, Tape, Tensor, Var};

/// Gated recurrent unit over a whole sequence.
///
/// `proj` holds the input projections `x_t W + b` for the reset, update and
/// candidate gates side by side (`T x 3H`). With `hp = h_{t-1} U + b_h`:
///
/// ```text
/// r = sigmoid(p_r + hp_r)      z = sigmoid(p_z + hp_z)
/// n = tanh(p_n + r * hp_n)     h_t = (1 - z) * n + z * h_{t-1}
/// ```
pub fn gru(tape: &mut Tape, proj: Var, u: Var, bh: Var) -> Var {
    let p = tape.value(proj);
    let uu = tape.value(u);
    let b = tape.value(bh);
    let steps = p.nrows();
    let hidden = uu.nrows();
    assert_eq!(p.ncols(), 3 * hidden, "gru projection width");
    let mut h = Tensor::zeros((steps, hidden));
    let mut gates = Tensor::zeros((steps, 3 * hidden));
    let mut hp_all = Tensor::zeros((steps, 3 * hidden));
    let mut prev = Tensor::zeros((1, hidden));
    for t in 0..steps {
        let hp = prev.dot(uu) + b;
        let mut cur = Tensor::zeros((1, hidden));
        for j in 0..hidden {
            let r = sigmoid_scalar(p[[t, j]] + hp[[0, j]]);
            let z = sigmoid_scalar(p[[t, hidden + j]] + hp[[0, hidden + j]]);
            let n = (p[[t, 2 * hidden + j]] + r * hp[[0, 2 * hidden + j]]).tanh();
            gates[[t, j]] = r;
            gates[[t, hidden + j]] = z;
            gates[[t, 2 * hidden + j]] = n;
            cur[[0, j]] = (1.0 - z) * n + z * prev[[0, j]];
        }
        hp_all.row_mut(t).assign(&hp.row(0));
        h.row_mut(t).assign(&cur.row(0));
        prev = cur;
    }
    let op = GruOp {
        gates,
        hp: hp_all,
        hidden,
    };
    tape.custom(Box::new(op), vec![proj, u, bh], h)
}

struct GruOp {
    gates: Tensor,
    hp: Tensor,
    hidden: usize,
}

impl CustomOp for GruOp {
    fn name(&self) -> &'static str {
        "gru"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let u = inputs[1];
        let hd = self.hidden;
        let steps = output.nrows();
        let mut g_proj = Tensor::zeros((steps, 3 * hd));
        let mut g_u = Tensor::zeros(u.dim());
        let mut g_b = Tensor::zeros((1, 3 * hd));
        let mut carry = Tensor::zeros((1, hd));
        for t in (0..steps).rev() {
            let prev = if t == 0 {
                Tensor::zeros((1, hd))
            } else {
                output.slice(s![t - 1..t, ..]).to_owned()
            };
            let mut dhp = Tensor::zeros((1, 3 * hd));
            let mut dprev = Tensor::zeros((1, hd));
            for j in 0..hd {
                let dh = grad[[t, j]] + carry[[0, j]];
                let r = self.gates[[t, j]];
                let z = self.gates[[t, hd + j]];
                let n = self.gates[[t, 2 * hd + j]];
                let dn = dh * (1.0 - z);
                let dz = dh * (prev[[0, j]] - n);
                dprev[[0, j]] = dh * z;
                let dan = dn * (1.0 - n * n);
                let dr = dan * self.hp[[t, 2 * hd + j]];
                let dar = dr * r * (1.0 - r);
                let daz = dz * z * (1.0 - z);
                g_proj[[t, j]] = dar;
                g_proj[[t, hd + j]] = daz;
                g_proj[[t, 2 * hd + j]] = dan;
                dhp[[0, j]] = dar;
                dhp[[0, hd + j]] = daz;
                dhp[[0, 2 * hd + j]] = dan * r;
            }
            g_u += &prev.t().dot(&dhp);
            g_b += &dhp;
            dprev += &dhp.dot(&u.t());
            carry = dprev;
        }
        vec![g_proj, g_u, g_b]
    }
}

/// Affine layer `x W + b`.
pub fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let m = tape.matmul(x, w);
    tape.add_row(m, b)
}

/// Output length of a strided 1-D convolution along time.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    if len + 2 * pad < kernel {
        0
    } else {
        (len + 2 * pad - kernel) / stride + 1
    }
}

/// Gathers strided, zero-padded windows of `x` (`T x C`) into
/// `T_out x (kernel * C)` so that a convolution becomes one matmul.
pub fn im2col(tape: &mut Tape, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
    let xv = tape.value(x);
    let (len, ch) = xv.dim();
    let out_len = conv_out_len(len, kernel, stride, pad);
    let mut out = Tensor::zeros((out_len, kernel * ch));
    for o in 0..out_len {
        for k in 0..kernel {
            let src = (o * stride + k) as isize - pad as isize;
            if src >= 0 && (src as usize) < len {
                out.slice_mut(s![o, k * ch..(k + 1) * ch])
                    .assign(&xv.row(src as usize));
            }
        }
    }
    let op = Im2Col {
        kernel,
        stride,
        pad,
    };
    tape.custom(Box::new(op), vec![x], out)
}

struct Im2Col {
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl CustomOp for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (len, ch) = inputs[0].dim();
        let mut g = Tensor::zeros((len, ch));
        for o in 0..grad.nrows() {
            for k in 0..self.kernel {
                let src = (o * self.stride + k) as isize - self.pad as isize;
                if src >= 0 && (src as usize) < len {
                    let mut row = g.row_mut(src as usize);
                    row += &grad.slice(s![o, k * ch..(k + 1) * ch]);
                }
            }
        }
        vec![g]
    }
}

/// Inverted-dropout keep mask scaled by `1 / (1 - rate)`.
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut impl Rng) -> Tensor {
    let keep = 1.0 - rate;
    Tensor::from_shape_fn(shape, |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

/// Glorot-style uniform bound.
pub fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
