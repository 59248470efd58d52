//! Cross-validation grids and fold construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive arithmetic range of exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRange {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl LogRange {
    pub fn new(from: f64, to: f64, step: f64) -> Self {
        LogRange { from, to, step }
    }

    /// A single exponent.
    pub fn single(v: f64) -> Self {
        LogRange { from: v, to: v, step: 1.0 }
    }

    /// Exponents in ascending order, endpoints included.
    pub fn exponents(&self) -> Vec<f64> {
        let count = ((self.to - self.from) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.from + i as f64 * self.step).collect()
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.from.is_finite() && self.to.is_finite() && self.to >= self.from) {
            return Err(Error::invalid(format!("{name}: need finite from <= to")));
        }
        if !(self.step > 0.0) {
            return Err(Error::invalid(format!("{name}: step must be positive")));
        }
        Ok(())
    }
}

/// Hyperparameter grids. Selection-stage exponents use `log_base`
/// (natural logarithm by default); ridge exponents are base 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvGrid {
    pub log_lambda: LogRange,
    pub log_phi_t: LogRange,
    pub log_phi_z: LogRange,
    pub log10_ridge: Vec<f64>,
    pub log_base: f64,
}

impl Default for CvGrid {
    fn default() -> Self {
        CvGrid {
            log_lambda: LogRange::new(-20.0, 0.0, 0.25),
            log_phi_t: LogRange::new(-10.0, 0.0, 2.5),
            log_phi_z: LogRange::new(-10.0, 0.0, 2.5),
            log10_ridge: vec![-1.0, -2.0, -3.0, -4.0, -5.0],
            log_base: std::f64::consts::E,
        }
    }
}

impl CvGrid {
    /// `λ` values in strictly descending order.
    pub fn lambdas(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.log_lambda.exponents().iter().map(|e| self.log_base.powf(*e)).collect();
        v.reverse();
        v
    }

    pub fn phi_t(&self) -> Vec<f64> {
        self.log_phi_t.exponents().iter().map(|e| self.log_base.powf(*e)).collect()
    }

    pub fn phi_z(&self) -> Vec<f64> {
        self.log_phi_z.exponents().iter().map(|e| self.log_base.powf(*e)).collect()
    }

    /// Ridge weights in descending order.
    pub fn ridge(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.log10_ridge.iter().map(|e| 10f64.powf(*e)).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// Same grid with the `λ` step multiplied by `factor`.
    pub fn coarsened(&self, factor: f64) -> Self {
        CvGrid {
            log_lambda: LogRange {
                step: self.log_lambda.step * factor,
                ..self.log_lambda
            },
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.log_lambda.validate("log_lambda")?;
        self.log_phi_t.validate("log_phi_t")?;
        self.log_phi_z.validate("log_phi_z")?;
        if !(self.log_base > 1.0) {
            return Err(Error::invalid("log_base must exceed 1"));
        }
        if self.log10_ridge.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ridge exponents must be finite"));
        }
        Ok(())
    }
}

/// Fold label of each observation: `folds` contiguous blocks of the index
/// range after a cyclic rotation drawn from `seed`.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!("cannot split {n} observations into {folds} folds")));
    }
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0..n);
    let base = n / folds;
    let extra = n % folds;
    // first `extra` folds get one more element
    let mut label_of = Vec::with_capacity(n);
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        label_of.extend(std::iter::repeat_n(f, size));
    }
    Ok((0..n).map(|i| label_of[(i + offset) % n]).collect())
}

/// `(train, test)` index lists per fold, indices ascending.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let labels = fold_assignment(n, folds, seed)?;
    Ok((0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| labels[i] == f);
            (train, test)
        })
        .collect())
}
