//! Exact piecewise-polynomial algebra on the unit interval.
//!
//! Every piece is stored in *local* coordinates: on `[a, b]` the piece is
//! `sum_k c[k] * s^k` with `s = (x - a) / (b - a)`. Affine contractions of the
//! domain (the dyadic dilations used to generate wavelet levels) therefore
//! leave the coefficient vectors untouched, so higher levels are represented
//! without any rounding growth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussRule;

/// Relative width below which a merged subinterval is ignored.
const MIN_WIDTH: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePolynomial {
    breakpoints: Vec<f64>,
    pieces: Vec<Vec<f64>>,
}

impl PiecewisePolynomial {
    /// Builds from breakpoints `0 = x_0 < ... < x_m = 1` and `m` local
    /// coefficient vectors.
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<Vec<f64>>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::invalid("at least two breakpoints are required"));
        }
        if pieces.len() + 1 != breakpoints.len() {
            return Err(Error::invalid(format!(
                "{} breakpoints need {} pieces, got {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                pieces.len()
            )));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::invalid("breakpoints must start at 0 and end at 1"));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("breakpoints must be strictly increasing"));
        }
        if pieces.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("piece coefficients must be finite"));
        }
        Ok(Self::from_parts(breakpoints, pieces))
    }

    pub(crate) fn from_parts(breakpoints: Vec<f64>, pieces: Vec<Vec<f64>>) -> Self {
        let pieces = pieces.into_iter().map(trim).collect();
        PiecewisePolynomial { breakpoints, pieces }
    }

    pub fn constant(value: f64) -> Self {
        Self::from_parts(vec![0.0, 1.0], vec![vec![value]])
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Builds from pieces given as ordinary monomials in the global variable
    /// `x` (`sum_k c[k] x^k`), converting each to local coordinates.
    pub fn from_global_monomials(breakpoints: Vec<f64>, pieces: Vec<Vec<f64>>) -> Result<Self> {
        if pieces.len() + 1 != breakpoints.len() {
            return Err(Error::invalid("piece count must be breakpoint count minus one"));
        }
        let local = pieces
            .iter()
            .zip(breakpoints.windows(2))
            .map(|(c, w)| compose_affine(c, w[0], w[1] - w[0]))
            .collect();
        Self::new(breakpoints, local)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Vec<f64>] {
        &self.pieces
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn degree(&self) -> usize {
        self.pieces
            .iter()
            .map(|c| c.len().saturating_sub(1))
            .max()
            .unwrap_or(0)
    }

    /// Index of the piece used to evaluate at `x`: the right-hand piece at an
    /// interior breakpoint, the last piece at `x = 1`.
    pub fn piece_index(&self, x: f64) -> usize {
        let m = self.pieces.len();
        // first breakpoint strictly greater than x
        let upper = self.breakpoints.partition_point(|&b| b <= x);
        upper.saturating_sub(1).min(m - 1)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain {
                value: x,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(self.eval_unchecked(x))
    }

    /// Evaluation without the domain check; points outside `[0, 1]` use the
    /// nearest end piece.
    pub fn eval_unchecked(&self, x: f64) -> f64 {
        let i = self.piece_index(x);
        let a = self.breakpoints[i];
        let h = self.breakpoints[i + 1] - a;
        horner(&self.pieces[i], (x - a) / h)
    }

    /// Piecewise `k`-th derivative (distributional terms at breakpoints are
    /// not represented).
    pub fn derivative(&self, k: usize) -> Self {
        let pieces = self
            .pieces
            .iter()
            .zip(self.breakpoints.windows(2))
            .map(|(c, w)| {
                let scale = (w[1] - w[0]).powi(-(k as i32));
                differentiate(c, k).into_iter().map(|v| v * scale).collect()
            })
            .collect();
        Self::from_parts(self.breakpoints.clone(), pieces)
    }

    pub fn scale(&self, factor: f64) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|c| c.iter().map(|v| v * factor).collect())
            .collect();
        Self::from_parts(self.breakpoints.clone(), pieces)
    }

    /// `f((x - a) / (b - a))` on `[a, b]` and zero elsewhere, for `0 <= a < b <= 1`.
    pub fn contract(&self, a: f64, b: f64) -> Self {
        debug_assert!(0.0 <= a && a < b && b <= 1.0);
        let h = b - a;
        let mut breakpoints = Vec::with_capacity(self.breakpoints.len() + 2);
        let mut pieces = Vec::with_capacity(self.pieces.len() + 2);
        if a > 0.0 {
            breakpoints.push(0.0);
            pieces.push(vec![0.0]);
        }
        for &x in &self.breakpoints {
            breakpoints.push(if x == 1.0 { b } else { a + h * x });
        }
        pieces.extend(self.pieces.iter().cloned());
        if b < 1.0 {
            breakpoints.push(1.0);
            pieces.push(vec![0.0]);
        }
        let mut out = Self::from_parts(breakpoints, pieces);
        out.merge_zero_runs();
        out
    }

    fn merge_zero_runs(&mut self) {
        let mut bps = vec![self.breakpoints[0]];
        let mut pieces: Vec<Vec<f64>> = Vec::with_capacity(self.pieces.len());
        for (i, p) in self.pieces.iter().enumerate() {
            let zero = is_zero(p);
            if zero && pieces.last().is_some_and(|q| is_zero(q)) {
                *bps.last_mut().unwrap() = self.breakpoints[i + 1];
            } else {
                pieces.push(p.clone());
                bps.push(self.breakpoints[i + 1]);
            }
        }
        self.breakpoints = bps;
        self.pieces = pieces;
    }

    /// Smallest interval outside of which the function vanishes identically,
    /// or `None` for the zero function.
    pub fn support(&self) -> Option<(f64, f64)> {
        let first = self.pieces.iter().position(|p| !is_zero(p))?;
        let last = self.pieces.iter().rposition(|p| !is_zero(p))?;
        Some((self.breakpoints[first], self.breakpoints[last + 1]))
    }

    pub fn integral(&self) -> f64 {
        self.pieces
            .iter()
            .zip(self.breakpoints.windows(2))
            .map(|(c, w)| {
                let s: f64 = c.iter().enumerate().map(|(k, v)| v / (k as f64 + 1.0)).sum();
                s * (w[1] - w[0])
            })
            .sum()
    }

    /// `∫_0^1 x^k f(x) dx`, exact.
    pub fn moment(&self, k: usize) -> f64 {
        let rule = GaussRule::exact_for(self.degree() + k);
        self.pieces
            .iter()
            .zip(self.breakpoints.windows(2))
            .filter(|(c, _)| !is_zero(c))
            .map(|(c, w)| {
                let (a, b) = (w[0], w[1]);
                rule.integrate(a, b, |x| x.powi(k as i32) * horner(c, (x - a) / (b - a)))
            })
            .sum()
    }

    /// Re-expresses the function on a finer set of breakpoints that contains
    /// the current ones (up to rounding).
    pub fn refine(&self, breakpoints: &[f64]) -> Result<Self> {
        let mut pieces = Vec::with_capacity(breakpoints.len() - 1);
        for w in breakpoints.windows(2) {
            let (u, v) = (w[0], w[1]);
            let i = self.piece_index(0.5 * (u + v));
            let a = self.breakpoints[i];
            let h = self.breakpoints[i + 1] - a;
            // s = (x - a)/h with x = u + (v - u) t
            pieces.push(compose_affine(&self.pieces[i], (u - a) / h, (v - u) / h));
        }
        Self::new(breakpoints.to_vec(), pieces)
    }
}

/// `Σ c_i f_i` on the union of the breakpoints.
pub fn linear_combination(funcs: &[&PiecewisePolynomial], coefs: &[f64]) -> PiecewisePolynomial {
    let terms: Vec<(&PiecewisePolynomial, f64)> = funcs
        .iter()
        .zip(coefs)
        .filter(|(_, c)| **c != 0.0)
        .map(|(f, c)| (*f, *c))
        .collect();
    if terms.is_empty() {
        return PiecewisePolynomial::zero();
    }
    let mut bps: Vec<f64> = terms.iter().flat_map(|(f, _)| f.breakpoints.iter().copied()).collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let mut pieces = vec![vec![0.0]; bps.len() - 1];
    for (f, c) in terms {
        let r = f.refine(&bps).expect("union breakpoints are valid");
        for (acc, p) in pieces.iter_mut().zip(r.pieces) {
            let scaled: Vec<f64> = p.iter().map(|v| v * c).collect();
            *acc = poly_add(acc, &scaled);
        }
    }
    PiecewisePolynomial::from_parts(bps, pieces)
}

/// Exact `∫_0^1 f g` via merged breakpoints and a Gauss rule exact for the
/// product degree on every merged piece.
pub fn inner_product(f: &PiecewisePolynomial, g: &PiecewisePolynomial) -> f64 {
    let rule = GaussRule::exact_for(f.degree() + g.degree());
    let (lo, hi) = match (f.support(), g.support()) {
        (Some(a), Some(b)) => (a.0.max(b.0), a.1.min(b.1)),
        _ => return 0.0,
    };
    if hi <= lo {
        return 0.0;
    }
    integrate_merged(f, g, lo, hi, rule)
}

fn integrate_merged(
    f: &PiecewisePolynomial,
    g: &PiecewisePolynomial,
    lo: f64,
    hi: f64,
    rule: &GaussRule,
) -> f64 {
    let mut i = f.piece_index(lo);
    let mut j = g.piece_index(lo);
    let mut x = lo;
    let mut total = 0.0;
    while x < hi {
        let fe = f.breakpoints[i + 1];
        let ge = g.breakpoints[j + 1];
        let end = fe.min(ge).min(hi);
        if end - x > MIN_WIDTH {
            let (fc, gc) = (&f.pieces[i], &g.pieces[j]);
            if !is_zero(fc) && !is_zero(gc) {
                let (fa, fh) = (f.breakpoints[i], fe - f.breakpoints[i]);
                let (ga, gh) = (g.breakpoints[j], ge - g.breakpoints[j]);
                total += rule.integrate(x, end, |t| {
                    horner(fc, (t - fa) / fh) * horner(gc, (t - ga) / gh)
                });
            }
        }
        x = end;
        if fe <= end && i + 1 < f.pieces.len() {
            i += 1;
        }
        if ge <= end && j + 1 < g.pieces.len() {
            j += 1;
        }
        if fe > end && ge > end {
            break;
        }
    }
    total
}

pub(crate) fn horner(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * s + v)
}

fn is_zero(c: &[f64]) -> bool {
    c.iter().all(|&v| v == 0.0)
}

fn trim(mut c: Vec<f64>) -> Vec<f64> {
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    if c.is_empty() {
        c.push(0.0);
    }
    c
}

fn differentiate(c: &[f64], k: usize) -> Vec<f64> {
    if c.len() <= k {
        return vec![0.0];
    }
    (k..c.len())
        .map(|i| {
            let falling: f64 = (0..k).map(|r| (i - r) as f64).product();
            c[i] * falling
        })
        .collect()
}

/// Coefficients of `p(a + h s)` in powers of `s`.
pub(crate) fn compose_affine(c: &[f64], a: f64, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; c.len().max(1)];
    // Horner in polynomial arithmetic: out = out * (a + h s) + c_k
    for &ck in c.iter().rev() {
        for i in (0..out.len()).rev() {
            let shifted = if i > 0 { out[i - 1] * h } else { 0.0 };
            out[i] = out[i] * a + shifted;
        }
        out[0] += ck;
    }
    out
}

/// Multiplies two coefficient vectors (same variable).
pub(crate) fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

pub(crate) fn poly_add(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len().max(q.len())];
    for (i, v) in p.iter().enumerate() {
        out[i] += v;
    }
    for (i, v) in q.iter().enumerate() {
        out[i] += v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hat() -> PiecewisePolynomial {
        // x on [0, 1/2], 1 - x on [1/2, 1]
        PiecewisePolynomial::from_global_monomials(
            vec![0.0, 0.5, 1.0],
            vec![vec![0.0, 1.0], vec![1.0, -1.0]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_breakpoints() {
        assert!(PiecewisePolynomial::new(vec![0.0, 0.5], vec![vec![1.0]]).is_err());
        assert!(PiecewisePolynomial::new(vec![0.0, 0.5, 0.5, 1.0], vec![vec![1.0]; 3]).is_err());
        assert!(PiecewisePolynomial::new(vec![0.0, 1.0], vec![vec![1.0]; 2]).is_err());
    }

    #[test]
    fn right_piece_at_interior_breakpoint() {
        let step = PiecewisePolynomial::new(vec![0.0, 0.5, 1.0], vec![vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(step.eval(0.5).unwrap(), 2.0);
        assert_eq!(step.eval(0.4999).unwrap(), 1.0);
        assert_eq!(step.eval(1.0).unwrap(), 2.0);
        assert_eq!(step.eval(0.0).unwrap(), 1.0);
        assert!(matches!(step.eval(1.01), Err(Error::Domain { .. })));
        assert!(step.eval(-0.1).is_err());
    }

    #[test]
    fn global_to_local_conversion() {
        let p = PiecewisePolynomial::from_global_monomials(
            vec![0.0, 0.3, 1.0],
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.5, 0.0, 2.0]],
        )
        .unwrap();
        for &x in &[0.0, 0.1, 0.29, 0.3, 0.7, 1.0] {
            let want = if x < 0.3 {
                1.0 + 2.0 * x + 3.0 * x * x + 4.0 * x * x * x
            } else {
                -1.0 + 0.5 * x + 2.0 * x * x * x
            };
            assert!((p.eval(x).unwrap() - want).abs() < 1e-13);
        }
    }

    #[test]
    fn constant_inner_product() {
        let one = PiecewisePolynomial::constant(1.0);
        assert!((inner_product(&one, &one) - 1.0).abs() < 1e-15);
        assert!((inner_product(&hat(), &one) - 0.25).abs() < 1e-15);
        assert!((inner_product(&hat(), &hat()) - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn contraction_keeps_values() {
        let h = hat();
        let c = h.contract(0.25, 0.5);
        assert_eq!(c.support(), Some((0.25, 0.5)));
        for &x in &[0.0, 0.3, 0.375, 0.45, 0.6, 1.0] {
            let want = if (0.25..0.5).contains(&x) {
                h.eval((x - 0.25) / 0.25).unwrap()
            } else {
                0.0
            };
            assert!((c.eval(x).unwrap() - want).abs() < 1e-15);
        }
        // nested contractions merge zero runs
        let cc = c.contract(0.5, 1.0);
        assert_eq!(cc.piece_count(), 4);
    }

    #[test]
    fn derivatives_scale_with_piece_width() {
        let p = PiecewisePolynomial::from_global_monomials(
            vec![0.0, 0.25, 1.0],
            vec![vec![0.0, 0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0, 1.0]],
        )
        .unwrap();
        let d2 = p.derivative(2);
        assert!((d2.eval(0.1).unwrap() - 0.6).abs() < 1e-13);
        assert!((d2.eval(0.5).unwrap() - (2.0 + 3.0)).abs() < 1e-13);
    }

    #[test]
    fn moments_and_integral_agree() {
        let h = hat();
        assert!((h.integral() - 0.25).abs() < 1e-15);
        assert!((h.moment(0) - 0.25).abs() < 1e-15);
        assert!((h.moment(1) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn refine_is_exact() {
        let h = hat();
        let r = h.refine(&[0.0, 0.2, 0.5, 0.75, 1.0]).unwrap();
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert!((r.eval(x).unwrap() - h.eval(x).unwrap()).abs() < 1e-15);
        }
    }
}
