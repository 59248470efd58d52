//! Penalized degree-5 B-spline smoother with a third-derivative roughness
//! penalty and GCV-chosen smoothing parameter, used to turn sampled
//! positions into velocities.

use nalgebra::{DMatrix, DVector};

use crate::basis::bspline_functions;
use crate::error::{Error, Result};
use crate::poly::{inner_product, PiecewisePolynomial};

const DEGREE: usize = 5;
const PENALTY_ORDER: usize = 3;
/// Coarse log10 grid for the smoothing parameter before golden refinement.
const LOG_LAMBDA_LO: f64 = -14.0;
const LOG_LAMBDA_HI: f64 = 2.0;
const LOG_LAMBDA_STEP: f64 = 0.5;
const GOLDEN_STEPS: usize = 40;

#[derive(Debug, Clone)]
pub struct SmoothingSpline {
    functions: Vec<PiecewisePolynomial>,
    derivatives: Vec<PiecewisePolynomial>,
    coefs: Vec<f64>,
    t0: f64,
    span: f64,
    pub lambda: f64,
    pub gcv: f64,
}

impl SmoothingSpline {
    /// Fits `values` sampled at strictly increasing `times`.
    pub fn fit(times: &[f64], values: &[f64]) -> Result<Self> {
        let n = times.len();
        if n != values.len() {
            return Err(Error::mismatch("times and values differ in length"));
        }
        if n < DEGREE + 2 {
            return Err(Error::invalid(format!(
                "the smoother needs at least {} samples, got {n}",
                DEGREE + 2
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("smoother times must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("smoother values must be finite"));
        }
        let t0 = times[0];
        let span = times[n - 1] - t0;
        let dim = (n / 2).clamp(DEGREE + 1, 80);
        let functions = bspline_functions(DEGREE, dim)?;
        let derivatives: Vec<_> = functions.iter().map(|f| f.derivative(1)).collect();
        let rough: Vec<_> = functions.iter().map(|f| f.derivative(PENALTY_ORDER)).collect();

        let b = DMatrix::from_fn(n, dim, |i, j| functions[j].eval_unchecked((times[i] - t0) / span));
        let p = DMatrix::from_fn(dim, dim, |i, j| inner_product(&rough[i], &rough[j]));
        let btb = b.transpose() * &b;
        let bty = b.transpose() * DVector::from_column_slice(values);
        let y = DVector::from_column_slice(values);
        // scale the penalty to the data term so the grid is problem independent
        let scale = btb.trace() / p.trace().max(f64::MIN_POSITIVE);

        let gcv_at = |log_lambda: f64| -> Option<(f64, DVector<f64>)> {
            let lambda = 10f64.powf(log_lambda) * scale;
            let m = &btb + &p * lambda;
            let chol = nalgebra::Cholesky::new(m)?;
            let c = chol.solve(&bty);
            let resid = &y - &b * &c;
            let rss = resid.norm_squared();
            let edf = chol.solve(&btb).trace();
            let denom = (n as f64 - edf).max(1e-8);
            Some((n as f64 * rss / (denom * denom), c))
        };

        let steps = ((LOG_LAMBDA_HI - LOG_LAMBDA_LO) / LOG_LAMBDA_STEP).round() as usize;
        let mut best: Option<(f64, f64)> = None;
        for s in 0..=steps {
            let l = LOG_LAMBDA_LO + s as f64 * LOG_LAMBDA_STEP;
            if let Some((g, _)) = gcv_at(l) {
                if best.is_none_or(|(_, bg)| g < bg) {
                    best = Some((l, g));
                }
            }
        }
        let (centre, _) = best.ok_or_else(|| Error::Numerical("smoother system is singular on the whole grid".into()))?;
        let score = |l: f64| gcv_at(l).map_or(f64::INFINITY, |(g, _)| g);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut c) = (centre - LOG_LAMBDA_STEP, centre + LOG_LAMBDA_STEP);
        let mut x1 = c - phi * (c - a);
        let mut x2 = a + phi * (c - a);
        let (mut f1, mut f2) = (score(x1), score(x2));
        for _ in 0..GOLDEN_STEPS {
            if f1 <= f2 {
                c = x2;
                x2 = x1;
                f2 = f1;
                x1 = c - phi * (c - a);
                f1 = score(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + phi * (c - a);
                f2 = score(x2);
            }
        }
        let mut candidates = vec![centre, 0.5 * (a + c)];
        candidates.sort_by(|p, q| score(*p).total_cmp(&score(*q)));
        let log_lambda = candidates[0];
        let (gcv, coefs) = gcv_at(log_lambda).expect("chosen smoothing parameter is feasible");
        Ok(SmoothingSpline {
            functions,
            derivatives,
            coefs: coefs.as_slice().to_vec(),
            t0,
            span,
            lambda: 10f64.powf(log_lambda) * scale,
            gcv,
        })
    }

    fn local(&self, t: f64) -> f64 {
        ((t - self.t0) / self.span).clamp(0.0, 1.0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let x = self.local(t);
        self.functions.iter().zip(&self.coefs).map(|(f, c)| c * f.eval_unchecked(x)).sum()
    }

    /// Analytic first derivative in the original time units.
    pub fn derivative(&self, t: f64) -> f64 {
        let x = self.local(t);
        let d: f64 = self.derivatives.iter().zip(&self.coefs).map(|(f, c)| c * f.eval_unchecked(x)).sum();
        d / self.span
    }
}

/// Velocities `ẑ'(t_i)` from sampled positions.
pub fn velocities(times: &[f64], positions: &[f64]) -> Result<Vec<f64>> {
    let s = SmoothingSpline::fit(times, positions)?;
    Ok(times.iter().map(|&t| s.derivative(t)).collect())
}
