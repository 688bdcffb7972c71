//! Small dense complex linear algebra.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = Array2<Complex64>;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &CMat, b: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::invalid("solve: shape mismatch"));
    }
    let mut a = a.clone();
    let mut x = b.clone();
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].norm().total_cmp(&a[[j, col]].norm()))
            .expect("nonempty");
        if a[[pivot, col]].norm() <= scale * 1e-15 || a[[pivot, col]].norm() == 0.0 {
            return Err(Error::DegenerateFilter("singular matrix".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
            }
            for k in 0..x.ncols() {
                x.swap([pivot, k], [col, k]);
            }
        }
        let inv = a[[col, col]].inv();
        for row in col + 1..n {
            let f = a[[row, col]] * inv;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in col..n {
                let v = a[[col, k]];
                a[[row, k]] -= f * v;
            }
            for k in 0..x.ncols() {
                let v = x[[col, k]];
                x[[row, k]] -= f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let inv = a[[col, col]].inv();
        for k in 0..x.ncols() {
            let mut acc = x[[col, k]];
            for j in col + 1..n {
                acc -= a[[col, j]] * x[[j, k]];
            }
            x[[col, k]] = acc * inv;
        }
    }
    Ok(x)
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    solve(a, &CMat::eye(a.nrows()))
}

/// Conjugate transpose.
pub fn hermitian(a: &CMat) -> CMat {
    a.t().mapv(|v| v.conj())
}

pub fn trace(a: &CMat) -> Complex64 {
    a.diag().sum()
}

pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    let (n, k) = a.dim();
    let m = b.ncols();
    assert_eq!(b.nrows(), k, "matmul shape");
    let mut out = CMat::zeros((n, m));
    for i in 0..n {
        for l in 0..k {
            let v = a[[i, l]];
            if v == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..m {
                out[[i, j]] += v * b[[l, j]];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, m: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_shape_fn((n, m), |_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..8 {
            let a = random(n, n, &mut rng);
            let ai = inverse(&a).unwrap();
            let p = matmul(&a, &ai);
            for i in 0..n {
                for j in 0..n {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((p[[i, j]] - e).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = CMat::zeros((3, 3));
        assert!(matches!(inverse(&a), Err(Error::DegenerateFilter(_))));
    }
}
