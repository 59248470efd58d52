//! Group LASSO with quadratic-form group penalties
//! `‖Σ_k A_k β_k − y‖² + λ Σ_k √(β_kᵀ G_k β_k)`.
//!
//! With `G_k = L_k L_kᵀ` and `u_k = L_kᵀ β_k` this becomes a standard group
//! LASSO in `u`, solved by cyclic blockwise majorization-minimization or,
//! optionally, exact blockwise minimization.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    dot, norm2, power_iteration, solve_lower_in_place, solve_lower_transpose_in_place,
};
use crate::penalty::PenaltyMatrix;
use crate::sparse::CsrMatrix;

/// Relative inflation of the power-iteration estimate so the majorization
/// constant stays an upper bound.
const ETA_INFLATION: f64 = 1e-6;

/// How the substituted block `Ã = A L⁻ᵀ` is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Storage {
    /// Explicit dense `Ã`.
    Dense,
    /// Sparse `A` with `L`; products go through triangular solves.
    Factored,
    /// Whichever of the two is cheaper per product.
    Auto,
}

/// One substituted design block.
#[derive(Debug, Clone)]
pub enum GroupDesign {
    Dense {
        /// Column-major `N × d`.
        tilde: DMatrix<f64>,
        chol: Arc<DMatrix<f64>>,
    },
    Factored {
        a: CsrMatrix,
        chol: Arc<DMatrix<f64>>,
    },
}

/// `Ã = A L⁻ᵀ` for the penalty's Cholesky factor `L`.
pub fn substitute(a: &CsrMatrix, penalty: &PenaltyMatrix, storage: Storage) -> Result<GroupDesign> {
    substitute_with(a, Arc::new(penalty.chol().clone()), storage)
}

pub fn substitute_with(a: &CsrMatrix, chol: Arc<DMatrix<f64>>, storage: Storage) -> Result<GroupDesign> {
    let d = chol.nrows();
    if a.ncols() != d {
        return Err(Error::mismatch(format!(
            "block has {} columns but the penalty is {d}x{d}",
            a.ncols()
        )));
    }
    if chol.diagonal().iter().any(|&v| !(v.abs() > 0.0 && v.is_finite())) {
        return Err(Error::Numerical("singular Cholesky factor".into()));
    }
    let dense = match storage {
        Storage::Dense => true,
        Storage::Factored => false,
        Storage::Auto => a.nnz() + d * d >= a.nrows() * d,
    };
    if !dense {
        return Ok(GroupDesign::Factored { a: a.clone(), chol });
    }
    // row i of Ã solves L ãᵢ = aᵢ
    let n = a.nrows();
    let mut tilde = DMatrix::zeros(n, d);
    let mut row = vec![0.0; d];
    for i in 0..n {
        row.iter_mut().for_each(|v| *v = 0.0);
        for (j, v) in a.row(i) {
            row[j] = v;
        }
        solve_lower_in_place(&chol, &mut row);
        for (j, &v) in row.iter().enumerate() {
            tilde[(i, j)] = v;
        }
    }
    Ok(GroupDesign::Dense { tilde, chol })
}

impl GroupDesign {
    pub fn nrows(&self) -> usize {
        match self {
            GroupDesign::Dense { tilde, .. } => tilde.nrows(),
            GroupDesign::Factored { a, .. } => a.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        self.chol().nrows()
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        match self {
            GroupDesign::Dense { chol, .. } | GroupDesign::Factored { chol, .. } => chol,
        }
    }

    /// `out = Ãᵀ r`.
    pub fn tmul(&self, r: &[f64], out: &mut [f64]) {
        match self {
            GroupDesign::Dense { tilde, .. } => {
                let n = tilde.nrows();
                let data = tilde.as_slice();
                for (j, o) in out.iter_mut().enumerate() {
                    *o = dot(&data[j * n..(j + 1) * n], r);
                }
            }
            GroupDesign::Factored { a, chol } => {
                a.tmul_vec(r, out);
                solve_lower_in_place(chol, out);
            }
        }
    }

    /// `y += alpha · Ã u`.
    pub fn mul_add(&self, alpha: f64, u: &[f64], y: &mut [f64]) {
        match self {
            GroupDesign::Dense { tilde, .. } => {
                let n = tilde.nrows();
                let data = tilde.as_slice();
                for (j, &uj) in u.iter().enumerate() {
                    if uj == 0.0 {
                        continue;
                    }
                    let s = alpha * uj;
                    for (yi, &c) in y.iter_mut().zip(&data[j * n..(j + 1) * n]) {
                        *yi += s * c;
                    }
                }
            }
            GroupDesign::Factored { a, chol } => {
                let mut beta = u.to_vec();
                solve_lower_transpose_in_place(chol, &mut beta);
                a.mul_vec_add(alpha, &beta, y);
            }
        }
    }

    /// `β = L⁻ᵀ u`.
    pub fn to_beta(&self, u: &[f64]) -> Vec<f64> {
        let mut beta = u.to_vec();
        solve_lower_transpose_in_place(self.chol(), &mut beta);
        beta
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        match self {
            GroupDesign::Dense { tilde, chol } => GroupDesign::Dense {
                tilde: tilde.select_rows(rows),
                chol: chol.clone(),
            },
            GroupDesign::Factored { a, chol } => GroupDesign::Factored {
                a: a.select_rows(rows),
                chol: chol.clone(),
            },
        }
    }

    /// Explicit dense `Ã`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            GroupDesign::Dense { tilde, .. } => tilde.clone(),
            GroupDesign::Factored { .. } => {
                let d = self.ncols();
                let mut m = DMatrix::zeros(self.nrows(), d);
                let mut e = vec![0.0; d];
                let mut col = vec![0.0; self.nrows()];
                for j in 0..d {
                    e[j] = 1.0;
                    col.iter_mut().for_each(|v| *v = 0.0);
                    self.mul_add(1.0, &e, &mut col);
                    m.set_column(j, &nalgebra::DVector::from_column_slice(&col));
                    e[j] = 0.0;
                }
                m
            }
        }
    }

    /// Largest eigenvalue of `2ÃᵀÃ`, slightly inflated.
    pub fn majorizer(&self) -> f64 {
        let mut tmp = vec![0.0; self.nrows()];
        let top = power_iteration(self.ncols(), |x, out| {
            tmp.iter_mut().for_each(|v| *v = 0.0);
            self.mul_add(1.0, x, &mut tmp);
            self.tmul(&tmp, out);
        });
        2.0 * top * (1.0 + ETA_INFLATION)
    }
}

/// Block rotated onto the eigenvectors of `ÃᵀÃ = V diag(Λ) Vᵀ`:
/// `B = Ã V` has orthogonal columns with squared norms `Λ`.
#[derive(Debug, Clone)]
struct Spectrum {
    rotated: DMatrix<f64>,
    vectors: DMatrix<f64>,
    values: Vec<f64>,
}

impl Spectrum {
    fn new(g: &GroupDesign) -> Self {
        let t = g.to_dense();
        let gram = t.transpose() * &t;
        let eig = nalgebra::SymmetricEigen::new((&gram + gram.transpose()) * 0.5);
        Spectrum {
            rotated: &t * &eig.eigenvectors,
            values: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
            vectors: eig.eigenvectors,
        }
    }

    fn to_rotated(&self, u: &[f64]) -> Vec<f64> {
        (self.vectors.transpose() * nalgebra::DVector::from_column_slice(u)).as_slice().to_vec()
    }

    fn from_rotated(&self, uh: &[f64]) -> Vec<f64> {
        (&self.vectors * nalgebra::DVector::from_column_slice(uh)).as_slice().to_vec()
    }
}

/// Minimizer norm `s` of `‖r − Ã u‖² + λ‖u‖` in the eigenbasis: the root of
/// `Σ ĝ_i² / (2Λ_i s + λ)² = 1`, found by Newton on the concave
/// `h(s)^{-1/2} − 1`, which approaches the root monotonically from below.
fn secular_root(ghat: &[f64], values: &[f64], lambda: f64) -> f64 {
    let mut s = 0.0f64;
    for _ in 0..200 {
        let (mut h, mut dh) = (0.0, 0.0);
        for (&g, &l) in ghat.iter().zip(values) {
            let den = 2.0 * l * s + lambda;
            let t = g * g / (den * den);
            h += t;
            dh -= 4.0 * l * t / den;
        }
        let psi = 1.0 / h.sqrt() - 1.0;
        let dpsi = -0.5 * dh / (h * h.sqrt());
        if psi >= 0.0 || !(dpsi > 0.0) {
            break;
        }
        let next = s - psi / dpsi;
        if !(next > s * (1.0 + 1e-15)) || !next.is_finite() {
            break;
        }
        s = next;
    }
    s
}

/// How a group is updated within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockUpdate {
    /// One majorized step `u ← S(u − ∇/η, λ/η)`.
    Majorize,
    /// Exact minimization over the group with the others fixed.
    Exact,
}

/// Substituted group LASSO instance. Majorization constants are computed
/// once and reused for every `λ`; block spectra on first exact update.
#[derive(Debug, Clone)]
pub struct GroupProblem {
    groups: Vec<GroupDesign>,
    response: Vec<f64>,
    etas: Vec<f64>,
    spectra: OnceLock<Vec<Spectrum>>,
}

impl GroupProblem {
    pub fn new(groups: Vec<GroupDesign>, response: Vec<f64>) -> Result<Self> {
        let n = response.len();
        if let Some(k) = groups.iter().position(|g| g.nrows() != n) {
            return Err(Error::mismatch(format!(
                "group {k} has {} rows, response has {n}",
                groups[k].nrows()
            )));
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("response must be finite"));
        }
        let etas = groups.iter().map(GroupDesign::majorizer).collect();
        Ok(GroupProblem {
            groups,
            response,
            etas,
            spectra: OnceLock::new(),
        })
    }

    pub fn groups(&self) -> &[GroupDesign] {
        &self.groups
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(GroupDesign::ncols).collect()
    }

    pub fn nrows(&self) -> usize {
        self.response.len()
    }

    /// Restriction to a subset of rows (majorizers are recomputed).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.groups.iter().map(|g| g.select_rows(rows)).collect(),
            rows.iter().map(|&i| self.response[i]).collect(),
        )
    }

    pub fn zeros(&self) -> Vec<Vec<f64>> {
        self.groups.iter().map(|g| vec![0.0; g.ncols()]).collect()
    }

    /// `Σ_k Ã_k u_k`.
    pub fn fitted(&self, u: &[Vec<f64>]) -> Vec<f64> {
        let mut f = vec![0.0; self.nrows()];
        for (g, uk) in self.groups.iter().zip(u) {
            g.mul_add(1.0, uk, &mut f);
        }
        f
    }

    fn residual(&self, u: &[Vec<f64>]) -> Vec<f64> {
        let mut r = self.response.clone();
        for (g, uk) in self.groups.iter().zip(u) {
            g.mul_add(-1.0, uk, &mut r);
        }
        r
    }

    /// Smallest `λ` at which `u = 0` is optimal.
    pub fn lambda_max(&self) -> f64 {
        let mut best = 0.0f64;
        for g in &self.groups {
            let mut grad = vec![0.0; g.ncols()];
            g.tmul(&self.response, &mut grad);
            best = best.max(2.0 * norm2(&grad));
        }
        best
    }

    pub fn objective(&self, u: &[Vec<f64>], lambda: f64) -> f64 {
        let r = self.residual(u);
        dot(&r, &r) + lambda * u.iter().map(|v| norm2(v)).sum::<f64>()
    }

    /// Largest violation of the optimality conditions over all groups.
    pub fn kkt_residual(&self, u: &[Vec<f64>], lambda: f64) -> f64 {
        let r = self.residual(u);
        let mut worst = 0.0f64;
        for (g, uk) in self.groups.iter().zip(u) {
            let mut grad = vec![0.0; g.ncols()];
            g.tmul(&r, &mut grad);
            // loss gradient is -2Ãᵀ(y - Ãu)
            let nu = norm2(uk);
            let v = if nu > 0.0 {
                grad.iter()
                    .zip(uk)
                    .map(|(gi, ui)| (-2.0 * gi + lambda * ui / nu).powi(2))
                    .sum::<f64>()
                    .sqrt()
            } else {
                (2.0 * norm2(&grad) - lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Coefficients in the original (β) coordinates.
    pub fn to_beta(&self, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.groups.iter().zip(u).map(|(g, uk)| g.to_beta(uk)).collect()
    }

    /// Cyclic blockwise MM from `start` (zeros when `None`).
    pub fn solve(&self, lambda: f64, start: Option<&[Vec<f64>]>, opts: &SolverOptions) -> Result<Solution> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda = {lambda} must be finite and non-negative")));
        }
        let mut u = match start {
            Some(s) => {
                if s.len() != self.groups.len() || s.iter().zip(&self.groups).any(|(v, g)| v.len() != g.ncols()) {
                    return Err(Error::mismatch("warm start does not match the group sizes"));
                }
                s.to_vec()
            }
            None => self.zeros(),
        };
        let mut r = self.residual(&u);
        let mut scratch: Vec<Vec<f64>> = self.zeros();
        let spectra = match opts.update {
            BlockUpdate::Exact => Some(self.spectra.get_or_init(|| self.groups.iter().map(Spectrum::new).collect())),
            BlockUpdate::Majorize => None,
        };
        if let Some(sp) = spectra {
            u = u.iter().zip(sp).map(|(uk, s)| s.to_rotated(uk)).collect();
        }
        let lift = |u: &[Vec<f64>]| -> Vec<Vec<f64>> {
            match spectra {
                Some(sp) => u.iter().zip(sp).map(|(uk, s)| s.from_rotated(uk)).collect(),
                None => u.to_vec(),
            }
        };
        let mut trace = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        let all: Vec<usize> = (0..self.groups.len()).collect();
        // alternate full sweeps with sweeps over the current support
        let mut full_sweep = true;
        while iterations < opts.max_iter {
            let set: Vec<usize> = if full_sweep || !opts.active_set {
                all.clone()
            } else {
                all.iter().copied().filter(|&k| u[k].iter().any(|&v| v != 0.0)).collect()
            };
            let mut change = 0.0f64;
            for &k in &set {
                let step = match spectra {
                    Some(sp) => self.exact_update(k, &sp[k], lambda, &mut u[k], &mut r, &mut scratch[k]),
                    None => self.update_group(k, lambda, &mut u[k], &mut r, &mut scratch[k]),
                };
                change = change.max(step);
            }
            iterations += 1;
            if opts.trace {
                let lifted = lift(&u);
                trace.push(TraceRecord {
                    iteration: iterations,
                    objective: self.objective(&lifted, lambda),
                    kkt_residual: self.kkt_residual(&lifted, lambda),
                });
            }
            if change < opts.tol {
                if full_sweep || !opts.active_set {
                    converged = true;
                    break;
                }
                full_sweep = true;
            } else {
                full_sweep = !opts.active_set;
            }
        }
        let u = lift(&u);
        let objective = self.objective(&u, lambda);
        let kkt_residual = self.kkt_residual(&u, lambda);
        let active_groups = u
            .iter()
            .enumerate()
            .filter(|(_, v)| v.iter().any(|&x| x != 0.0))
            .map(|(k, _)| k)
            .collect();
        Ok(Solution {
            u,
            report: SolverReport {
                iterations,
                objective,
                kkt_residual,
                active_groups,
                converged,
                trace,
            },
        })
    }

    /// One MM step on group `k`; returns `η_k ‖Δu_k‖_∞`.
    fn update_group(&self, k: usize, lambda: f64, uk: &mut [f64], r: &mut [f64], v: &mut [f64]) -> f64 {
        let g = &self.groups[k];
        let eta = self.etas[k];
        if eta <= 0.0 {
            // an all-zero block contributes nothing
            let had = uk.iter().any(|&x| x != 0.0);
            uk.iter_mut().for_each(|x| *x = 0.0);
            return if had { f64::INFINITY } else { 0.0 };
        }
        g.tmul(r, v);
        for (vi, &ui) in v.iter_mut().zip(uk.iter()) {
            *vi = ui + 2.0 * *vi / eta;
        }
        let nv = norm2(v);
        let thresh = lambda / eta;
        let scale = if nv <= thresh { 0.0 } else { 1.0 - thresh / nv };
        let mut change = 0.0f64;
        for (vi, &ui) in v.iter_mut().zip(uk.iter()) {
            let new = scale * *vi;
            // v now holds the step Δu
            *vi = new - ui;
            change = change.max(vi.abs());
        }
        if change > 0.0 {
            g.mul_add(-1.0, v, r);
            for (ui, &di) in uk.iter_mut().zip(v.iter()) {
                *ui += di;
            }
            if scale == 0.0 {
                uk.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        eta * change
    }

    /// Exact minimization over group `k` in rotated coordinates; returns
    /// `η_k ‖Δû_k‖₂`, an upper bound on `η_k ‖Δu_k‖_∞`.
    fn exact_update(&self, k: usize, sp: &Spectrum, lambda: f64, uh: &mut [f64], r: &mut [f64], v: &mut [f64]) -> f64 {
        let b = &sp.rotated;
        let n = b.nrows();
        let data = b.as_slice();
        // ĝ = 2Bᵀ(r + B û) = 2(Bᵀr + Λ û)
        for (i, gi) in v.iter_mut().enumerate() {
            *gi = 2.0 * (dot(&data[i * n..(i + 1) * n], r) + sp.values[i] * uh[i]);
        }
        let top = sp.values.iter().fold(0.0f64, |a, &b| a.max(b));
        if norm2(v) <= lambda || top == 0.0 {
            v.iter_mut().for_each(|x| *x = 0.0);
        } else if lambda == 0.0 {
            // least squares; null directions keep their values
            for ((gi, &l), &u) in v.iter_mut().zip(&sp.values).zip(uh.iter()) {
                *gi = if l > 1e-14 * top { *gi / (2.0 * l) } else { u };
            }
        } else {
            let s = secular_root(v, &sp.values, lambda);
            for (gi, &l) in v.iter_mut().zip(&sp.values) {
                *gi *= s / (2.0 * l * s + lambda);
            }
        }
        // v now holds the new coordinates
        let mut sq = 0.0;
        for (i, (&new, u)) in v.iter().zip(uh.iter_mut()).enumerate() {
            let step = new - *u;
            if step != 0.0 {
                sq += step * step;
                for (ri, &c) in r.iter_mut().zip(&data[i * n..(i + 1) * n]) {
                    *ri -= step * c;
                }
                *u = new;
            }
        }
        self.etas[k] * sq.sqrt()
    }

    /// Warm-started solves along a strictly descending `λ` list.
    pub fn solve_path(&self, lambdas: &[f64], opts: &SolverOptions) -> Result<Vec<Solution>> {
        if lambdas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("lambda path must be strictly descending"));
        }
        let mut out: Vec<Solution> = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let start = out.last().map(|s| s.u.as_slice());
            let sol = self.solve(lambda, start, opts)?;
            out.push(sol);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Stop once `max_k η_k ‖Δu_k‖_∞` falls below this.
    pub tol: f64,
    /// Sweep cap.
    pub max_iter: usize,
    /// Cycle over the current support between full sweeps.
    pub active_set: bool,
    pub update: BlockUpdate,
    /// Record objective and KKT residual after every sweep.
    #[serde(skip)]
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 100_000,
            active_set: true,
            update: BlockUpdate::Majorize,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub objective: f64,
    pub kkt_residual: f64,
    pub active_groups: Vec<usize>,
    pub converged: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceRecord>,
}

impl SolverReport {
    /// Trace as JSON lines.
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|t| serde_json::to_string(t).expect("trace records serialize") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub u: Vec<Vec<f64>>,
    pub report: SolverReport,
}
