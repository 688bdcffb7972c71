//! Connectionist temporal classification loss by log-domain
//! forward-backward.

use crate::asr::BLANK;
use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `log(e^a + e^b)` that tolerates `-inf`.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Frames a target needs: one per label plus a blank between repeats.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Clone, Debug)]
pub struct CtcResult {
    pub loss: f64,
    /// `dL / d log y_t(k)`, same shape as the posteriors.
    pub grad: Tensor,
}

fn check(log_probs: &Tensor, target: &[usize]) -> Result<()> {
    let (frames, vocab) = log_probs.dim();
    if let Some(&bad) = target.iter().find(|&&k| k == BLANK || k >= vocab) {
        return Err(Error::invalid(format!("target token {bad} is blank or outside |V| = {vocab}")));
    }
    let needed = min_frames(target);
    if frames < needed || frames == 0 {
        return Err(Error::InfeasibleTarget { frames, needed: needed.max(1) });
    }
    Ok(())
}

/// `-log sum_alignments prod_t y_t(pi_t)` and its gradient with respect
/// to the log posteriors.
pub fn ctc_loss(log_probs: &Tensor, target: &[usize]) -> Result<CtcResult> {
    check(log_probs, target)?;
    let (frames, _) = log_probs.dim();
    let ext: Vec<usize> = std::iter::once(BLANK)
        .chain(target.iter().flat_map(|&k| [k, BLANK]))
        .collect();
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let mut alpha = vec![vec![ninf; s_len]; frames];
    alpha[0][0] = log_probs[[0, ext[0]]];
    if s_len > 1 {
        alpha[0][1] = log_probs[[0, ext[1]]];
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut a = alpha[t - 1][s];
            if s >= 1 {
                a = log_add(a, alpha[t - 1][s - 1]);
            }
            if skip(s) {
                a = log_add(a, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = a + log_probs[[t, ext[s]]];
        }
    }
    let last = frames - 1;
    let mut log_z = alpha[last][s_len - 1];
    if s_len > 1 {
        log_z = log_add(log_z, alpha[last][s_len - 2]);
    }
    if !log_z.is_finite() {
        return Err(Error::InfeasibleTarget {
            frames,
            needed: min_frames(target),
        });
    }

    // beta excludes the emission at t
    let mut beta = vec![vec![ninf; s_len]; frames];
    beta[last][s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last][s_len - 2] = 0.0;
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let step = |s2: usize| beta[t + 1][s2] + log_probs[[t + 1, ext[s2]]];
            let mut b = step(s);
            if s + 1 < s_len {
                b = log_add(b, step(s + 1));
            }
            if s + 2 < s_len && skip(s + 2) {
                b = log_add(b, step(s + 2));
            }
            beta[t][s] = b;
        }
    }

    let mut grad = Tensor::zeros(log_probs.dim());
    for t in 0..frames {
        for s in 0..s_len {
            let occ = alpha[t][s] + beta[t][s] - log_z;
            if occ > ninf {
                grad[[t, ext[s]]] -= occ.exp();
            }
        }
    }
    Ok(CtcResult { loss: -log_z, grad })
}

/// Records the CTC loss of `target` on `tape` as a `1 x 1` variable.
pub fn ctc_op(tape: &mut Tape, log_probs: Var, target: &[usize]) -> Result<Var> {
    let res = ctc_loss(tape.value(log_probs), target)?;
    let value = Tensor::from_elem((1, 1), res.loss);
    Ok(tape.custom(Box::new(CtcOp { grad: res.grad }), vec![log_probs], value))
}

struct CtcOp {
    grad: Tensor,
}

impl CustomOp for CtcOp {
    fn name(&self) -> &'static str {
        "ctc"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        vec![&self.grad * grad[[0, 0]]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::max_rel_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn collapse(path: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut prev = None;
        for &k in path {
            if Some(k) != prev && k != BLANK {
                out.push(k);
            }
            prev = Some(k);
        }
        out
    }

    /// Sums the probability of every path that collapses onto `target`.
    fn brute_force(lp: &Tensor, target: &[usize]) -> f64 {
        let (t, v) = lp.dim();
        let mut total = 0.0;
        let mut path = vec![0usize; t];
        for code in 0..v.pow(t as u32) {
            let mut c = code;
            for p in path.iter_mut() {
                *p = c % v;
                c /= v;
            }
            if collapse(&path) == target {
                total += path.iter().enumerate().map(|(i, &k)| lp[[i, k]]).sum::<f64>().exp();
            }
        }
        total
    }

    fn random_log_softmax(t: usize, v: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let mut x = Tensor::from_shape_fn((t, v), |_| rng.gen_range(-2.0..2.0));
        for mut row in x.rows_mut() {
            let lse = row.iter().map(|a| a.exp()).sum::<f64>().ln();
            row.mapv_inplace(|a| a - lse);
        }
        x
    }

    #[test]
    fn single_frame_and_uniform_examples() {
        let lp = Tensor::from_shape_vec((1, 3), vec![0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()]).unwrap();
        assert!((ctc_loss(&lp, &[1]).unwrap().loss + 0.5f64.ln()).abs() < 1e-15);
        let u = Tensor::from_elem((2, 3), -(3f64.ln()));
        assert!((ctc_loss(&u, &[1]).unwrap().loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_invalid_targets() {
        let u = Tensor::from_elem((2, 3), -(3f64.ln()));
        assert!(matches!(
            ctc_loss(&u, &[1, 1]),
            Err(Error::InfeasibleTarget { frames: 2, needed: 3 })
        ));
        assert!(matches!(ctc_loss(&u, &[0]), Err(Error::InvalidInput(_))));
        assert!(matches!(ctc_loss(&u, &[3]), Err(Error::InvalidInput(_))));
        let e = ctc_loss(&u, &[]).unwrap();
        assert!((e.loss - 2.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_enumeration_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..60 {
            let v = rng.gen_range(2..=4);
            let t = rng.gen_range(1..=6);
            let l = rng.gen_range(0..=3usize);
            let target: Vec<usize> = (0..l).map(|_| rng.gen_range(1..v)).collect();
            let lp = random_log_softmax(t, v, &mut rng);
            if min_frames(&target) > t {
                assert!(matches!(ctc_loss(&lp, &target), Err(Error::InfeasibleTarget { .. })));
                continue;
            }
            let loss = ctc_loss(&lp, &target).unwrap().loss;
            assert!((loss + brute_force(&lp, &target).ln()).abs() < 1e-9);
            let logits = Tensor::from_shape_fn((t, v), |_| rng.gen_range(-2.0..2.0));
            let err = max_rel_error(&[logits], 1e-6, 1e-6, &|tape, x| {
                let lp = tape.log_softmax_rows(x[0]);
                ctc_op(tape, lp, &target).unwrap()
            });
            assert!(err < 1e-4, "{err}");
        }
    }
}
