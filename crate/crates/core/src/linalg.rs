//! Small dense helpers: Cholesky factors, triangular solves on raw slices and
//! a deterministic power iteration.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Power-iteration cap.
pub const POWER_MAX_ITER: usize = 10_000;
/// Relative tolerance on successive eigenvalue estimates.
pub const POWER_TOL: f64 = 1e-8;
const POWER_SEED: u64 = 0x5eed_0f_5afe;

/// Lower Cholesky factor, or `None` when the matrix is not numerically SPD.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let l = nalgebra::Cholesky::new(m.clone())?.unpack();
    if l.diagonal().iter().all(|&d| d > 0.0 && d.is_finite()) {
        Some(l)
    } else {
        None
    }
}

/// Solves `L x = b` in place; `l` is column-major lower triangular.
pub fn solve_lower_in_place(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = l.nrows();
    let data = l.as_slice();
    for j in 0..n {
        let col = &data[j * n..(j + 1) * n];
        let xj = x[j] / col[j];
        x[j] = xj;
        if xj != 0.0 {
            for i in j + 1..n {
                x[i] -= col[i] * xj;
            }
        }
    }
}

/// Solves `Lᵀ x = b` in place.
pub fn solve_lower_transpose_in_place(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = l.nrows();
    let data = l.as_slice();
    for i in (0..n).rev() {
        let col = &data[i * n..(i + 1) * n];
        let mut acc = x[i];
        for j in i + 1..n {
            acc -= col[j] * x[j];
        }
        x[i] = acc / col[i];
    }
}

/// `y = Lᵀ x` for lower-triangular `L`.
pub fn mul_lower_transpose(l: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let data = l.as_slice();
    (0..n)
        .map(|i| {
            let col = &data[i * n..(i + 1) * n];
            (i..n).map(|j| col[j] * x[j]).sum()
        })
        .collect()
}

/// Largest eigenvalue of a symmetric positive semidefinite operator given by
/// `apply(x, out)`, from a fixed-seed start vector.
pub fn power_iteration(dim: usize, mut apply: impl FnMut(&[f64], &mut [f64])) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut x: Vec<f64> = (0..dim).map(|_| 1.0 + 0.1 * rng.random::<f64>()).collect();
    normalize(&mut x);
    let mut y = vec![0.0; dim];
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITER {
        apply(&x, &mut y);
        let rayleigh: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        x.iter_mut().zip(&y).for_each(|(a, b)| *a = b / norm);
        let converged = (rayleigh - estimate).abs() <= POWER_TOL * rayleigh.abs();
        estimate = rayleigh;
        if converged {
            break;
        }
    }
    estimate
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `xᵀ M x`.
pub fn quadratic_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = m.nrows();
    let data = m.as_slice();
    (0..n)
        .map(|j| {
            let col = &data[j * n..(j + 1) * n];
            x[j] * dot(col, x)
        })
        .sum()
}
