//! Multiscale piecewise-polynomial bases and clamped cubic B-spline bases.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussRule;
use crate::poly::{compose_affine, inner_product, poly_add, poly_mul, PiecewisePolynomial};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    Multiscale { degree: usize, levels: usize },
    Spline { dim: usize },
}

/// Ordered basis family on `[0, 1]` with its Gram and second-derivative Gram
/// matrices. Multiscale functions are ordered level by level, so truncating
/// at level `m` keeps a prefix of the columns.
#[derive(Debug, Clone)]
pub struct BasisSet {
    kind: BasisKind,
    functions: Vec<PiecewisePolynomial>,
    levels: Vec<usize>,
    gram: DMatrix<f64>,
    d2gram: DMatrix<f64>,
}

impl BasisSet {
    fn from_functions(kind: BasisKind, functions: Vec<PiecewisePolynomial>, levels: Vec<usize>) -> Self {
        let (gram, d2gram) = gram_matrices(&functions);
        BasisSet {
            kind,
            functions,
            levels,
            gram,
            d2gram,
        }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[PiecewisePolynomial] {
        &self.functions
    }

    pub fn function(&self, j: usize) -> &PiecewisePolynomial {
        &self.functions[j]
    }

    /// Level tag of function `j` (always 0 for splines).
    pub fn level(&self, j: usize) -> usize {
        self.levels[j]
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn d2gram(&self) -> &DMatrix<f64> {
        &self.d2gram
    }

    /// Highest level present (0 for splines).
    pub fn max_level(&self) -> usize {
        match self.kind {
            BasisKind::Multiscale { levels, .. } => levels,
            BasisKind::Spline { .. } => 0,
        }
    }

    /// Number of leading functions of level `<= m`. For splines every
    /// function is kept.
    pub fn prefix_through_level(&self, m: usize) -> usize {
        match self.kind {
            BasisKind::Multiscale { degree, levels } => (degree + 1) << m.min(levels),
            BasisKind::Spline { dim } => dim,
        }
    }

    /// Values of every basis function at `x`.
    pub fn eval_all(&self, x: f64) -> Result<Vec<f64>> {
        self.functions.iter().map(|f| f.eval(x)).collect()
    }
}

/// Gram matrix of L² inner products and the matrix of inner products of the
/// piecewise second derivatives.
pub fn gram_matrices(functions: &[PiecewisePolynomial]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d2: Vec<_> = functions.iter().map(|f| f.derivative(2)).collect();
    let n = functions.len();
    let mut gram = DMatrix::zeros(n, n);
    let mut d2gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let g = inner_product(&functions[i], &functions[j]);
            let d = inner_product(&d2[i], &d2[j]);
            gram[(i, j)] = g;
            gram[(j, i)] = g;
            d2gram[(i, j)] = d;
            d2gram[(j, i)] = d;
        }
    }
    (gram, d2gram)
}

/// The explicit cubic seed: interpolation points, the level-0 Lagrange
/// cubics and the level-1 piecewise cubics with four vanishing moments.
#[derive(Debug, Clone)]
pub struct CollocationSeed {
    pub t_points: [f64; 4],
    pub w0: Vec<PiecewisePolynomial>,
    pub w1: Vec<PiecewisePolynomial>,
}

impl CollocationSeed {
    pub fn cubic() -> Self {
        let t_points = [0.2, 0.4, 0.6, 0.8];
        // ascending monomial coefficients in x
        let w0_coefs: [[f64; 4]; 4] = [
            [4.0, -65.0 / 3.0, 75.0 / 2.0, -125.0 / 6.0],
            [-6.0, 95.0 / 2.0, -100.0, 125.0 / 2.0],
            [4.0, -35.0, 175.0 / 2.0, -125.0 / 2.0],
            [-1.0, 55.0 / 6.0, -25.0, 125.0 / 6.0],
        ];
        let w0 = w0_coefs
            .iter()
            .map(|c| {
                PiecewisePolynomial::from_global_monomials(vec![0.0, 1.0], vec![c.to_vec()])
                    .expect("valid seed")
            })
            .collect();

        // (left piece on [0, 1/2), right piece on [1/2, 1]), each scaled by 1/48,
        // descending powers as printed: x^3, x^2, x, 1
        let w1_coefs: [([f64; 4], [f64; 4]); 4] = [
            ([-920.0, 1080.0, -320.0, 19.0], [7080.0, -15720.0, 11360.0, -2669.0]),
            ([-23480.0, 15720.0, -2700.0, 91.0], [520.0, -1080.0, 660.0, -101.0]),
            ([-520.0, 480.0, -60.0, -1.0], [23480.0, -54720.0, 41700.0, -10369.0]),
            ([-7080.0, 5520.0, -1160.0, 51.0], [920.0, -1680.0, 920.0, -141.0]),
        ];
        let w1 = w1_coefs
            .iter()
            .map(|(l, r)| {
                // Convert each half exactly-ish: integer coefficients are
                // shifted first, then scaled by 1/48.
                let to_local = |c: &[f64; 4], a: f64| -> Vec<f64> {
                    let ascending = [c[3], c[2], c[1], c[0]];
                    compose_affine(&ascending, a, 0.5)
                        .into_iter()
                        .map(|v| v / 48.0)
                        .collect()
                };
                PiecewisePolynomial::new(vec![0.0, 0.5, 1.0], vec![to_local(l, 0.0), to_local(r, 0.5)])
                    .expect("valid seed")
            })
            .collect();
        CollocationSeed { t_points, w0, w1 }
    }
}

/// Generates the wavelet levels `W_1, ..., W_n` from `W_1` by the dyadic
/// maps `T_0 f = f(2x)` and `T_1 f = f(2x - 1)`: `W_{l+1} = T_0 W_l ∪ T_1 W_l`.
/// Degree-generic. Within a level the functions are ordered by support
/// position, then by seed index.
pub fn generate_levels(w1: &[PiecewisePolynomial], n: usize) -> Vec<Vec<PiecewisePolynomial>> {
    let mut levels: Vec<Vec<PiecewisePolynomial>> = Vec::with_capacity(n);
    if n == 0 {
        return levels;
    }
    levels.push(w1.to_vec());
    for _ in 2..=n {
        let prev = levels.last().unwrap();
        let next: Vec<_> = prev
            .iter()
            .map(|w| w.contract(0.0, 0.5))
            .chain(prev.iter().map(|w| w.contract(0.5, 1.0)))
            .collect();
        levels.push(next);
    }
    levels
}

/// Multiscale basis of the piecewise polynomials of degree `p` on the dyadic
/// grid of level `n`: `2^n (p + 1)` functions.
pub fn build_multiscale_basis(p: usize, n: usize) -> Result<BasisSet> {
    if p != 3 {
        return Err(Error::UnsupportedDegree(p));
    }
    if n > 12 {
        return Err(Error::invalid(format!("level {n} is too deep")));
    }
    let seed = CollocationSeed::cubic();
    let mut functions = seed.w0.clone();
    let mut tags = vec![0; functions.len()];
    for (i, level) in generate_levels(&seed.w1, n).into_iter().enumerate() {
        tags.extend(std::iter::repeat_n(i + 1, level.len()));
        functions.extend(level);
    }
    Ok(BasisSet::from_functions(
        BasisKind::Multiscale { degree: p, levels: n },
        functions,
        tags,
    ))
}

/// `q` clamped cubic B-splines on a uniform open knot vector on `[0, 1]`.
pub fn build_spline_basis(q: usize) -> Result<BasisSet> {
    if q < 4 {
        return Err(Error::invalid(format!("a cubic spline basis needs q >= 4, got {q}")));
    }
    let functions = bspline_functions(3, q)?;
    Ok(BasisSet::from_functions(BasisKind::Spline { dim: q }, functions, vec![0; q]))
}

/// Clamped B-splines of the given degree with `dim` functions on a uniform
/// open knot vector over `[0, 1]`, as exact piecewise polynomials.
pub fn bspline_functions(degree: usize, dim: usize) -> Result<Vec<PiecewisePolynomial>> {
    if dim < degree + 1 {
        return Err(Error::invalid(format!(
            "degree-{degree} B-splines need at least {} functions",
            degree + 1
        )));
    }
    let intervals = dim - degree;
    let mut knots = vec![0.0; degree];
    for i in 0..=intervals {
        knots.push(if i == intervals { 1.0 } else { i as f64 / intervals as f64 });
    }
    knots.extend(std::iter::repeat_n(1.0, degree));
    let breakpoints: Vec<f64> = knots[degree..=degree + intervals].to_vec();

    // pieces[j][iv]: local coefficients of B_j on interval iv
    let mut pieces = vec![vec![vec![0.0]; intervals]; dim];
    for iv in 0..intervals {
        let a = breakpoints[iv];
        let h = breakpoints[iv + 1] - a;
        let span = iv + degree;
        // degree-0 functions on this interval: only B_span is 1
        let mut current: Vec<Vec<f64>> = (0..knots.len() - 1)
            .map(|j| if j == span { vec![1.0] } else { vec![0.0] })
            .collect();
        for k in 1..=degree {
            let mut next = Vec::with_capacity(knots.len() - 1 - k);
            for j in 0..knots.len() - 1 - k {
                let mut acc = vec![0.0];
                let d1 = knots[j + k] - knots[j];
                if d1 > 0.0 {
                    // (x - t_j)/d1 with x = a + h s
                    let lin = [(a - knots[j]) / d1, h / d1];
                    acc = poly_add(&acc, &poly_mul(&lin, &current[j]));
                }
                let d2 = knots[j + k + 1] - knots[j + 1];
                if d2 > 0.0 {
                    let lin = [(knots[j + k + 1] - a) / d2, -h / d2];
                    acc = poly_add(&acc, &poly_mul(&lin, &current[j + 1]));
                }
                next.push(acc);
            }
            current = next;
        }
        for (j, basis_pieces) in pieces.iter_mut().enumerate() {
            basis_pieces[iv] = current[j].clone();
        }
    }
    pieces
        .into_iter()
        .map(|p| PiecewisePolynomial::new(breakpoints.clone(), p))
        .collect()
}

/// `∫₀¹ f w_j` for every basis function, by Gauss quadrature on each piece.
pub fn project(basis: &BasisSet, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let rule = GaussRule::get(16);
    basis
        .functions()
        .iter()
        .map(|w| {
            w.breakpoints()
                .windows(2)
                .map(|iv| rule.integrate(iv[0], iv[1], |x| f(x) * w.eval_unchecked(x)))
                .sum()
        })
        .collect()
}

/// Constant `c_p = √(2p+3) / ((p+1)! 2^{p+1}) · max_{v ∈ W₁} ‖v‖` of the
/// coefficient decay bound `|∫ f w| ≤ c_p 2^{−(p+1)ℓ} max|f⁽ᵖ⁾|` for `w` at
/// level `ℓ`.
pub fn decay_constant(basis: &BasisSet) -> Result<f64> {
    let BasisKind::Multiscale { degree: p, .. } = basis.kind() else {
        return Err(Error::invalid("decay constant needs a multiscale basis"));
    };
    let norms: Vec<f64> = (0..basis.len())
        .filter(|&j| basis.level(j) == 1)
        .map(|j| basis.gram()[(j, j)].sqrt())
        .collect();
    if norms.is_empty() {
        return Err(Error::invalid("decay constant needs at least one wavelet level"));
    }
    let vmax = norms.iter().copied().fold(0.0, f64::max);
    let factorial: f64 = (1..=p + 1).map(|k| k as f64).product();
    Ok(((2 * p + 3) as f64).sqrt() / (factorial * 2f64.powi(p as i32 + 1)) * vmax)
}
