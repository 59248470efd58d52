//! Multistage adaptive sensor selection, ridge kernel estimation,
//! cross-validation and prediction.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{kept_columns, sparsify, Assembler, DesignBlock};
use crate::basis::{build_multiscale_basis, build_spline_basis, BasisSet};
use crate::cv::{fold_indices, CvGrid};
use crate::error::{Error, Result};
use crate::lasso::{substitute_with, BlockUpdate, GroupDesign, GroupProblem, SolverOptions, Storage};
use crate::linalg::{cholesky_lower, dot, quadratic_form};
use crate::penalty::{Condensation, PenaltyParts, PenaltyWeights};
use crate::poly::{inner_product, linear_combination, PiecewisePolynomial};
use crate::signal::{Dataset, PositionMap};
use crate::sparse::CsrMatrix;

/// A sensor is active when its coefficient norm exceeds this.
pub const ACTIVE_THRESHOLD: f64 = 1e-10;
/// Adaptive weights for (near-)zero norms.
pub const WEIGHT_CAP: f64 = 1e12;
const NORM_FLOOR: f64 = 1e-12;
const WEIGHT_STABLE: f64 = 1e-6;
/// CV scores closer than this (relative) are ties.
const TIE_RTOL: f64 = 1e-12;
/// Relative pivot floor for the ridge normal equations.
const PIVOT_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Truncated multiscale lag basis with sparsified blocks (MSAFE).
    Multiscale,
    /// Cubic spline lag basis (SAFE).
    Spline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Multiscale polynomial degree.
    pub p: usize,
    /// Multiscale level.
    pub n: usize,
    /// Truncation level; `None` keeps every level.
    pub m: Option<usize>,
    /// Position spline dimension.
    pub q: usize,
    /// Lag spline dimension in spline mode.
    pub t_dim: usize,
    /// Fraction of block entries kept; defaults to 0.1 (multiscale) or 1.
    pub keep_fraction: Option<f64>,
    /// History window width in time units.
    pub window: f64,
    pub grids: CvGrid,
    pub stages: usize,
    pub folds: usize,
    pub seed: u64,
    pub solver: SolverOptions,
    pub storage: Storage,
    /// Solve on the columns that survive truncation only.
    pub condense: bool,
    /// Stop descending the `λ` grid once the mean CV error has not improved
    /// over this many log-units of `λ`; `None` scans the whole grid.
    pub cv_patience: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Multiscale,
            p: 3,
            n: 2,
            m: Some(0),
            q: 10,
            t_dim: 10,
            keep_fraction: None,
            window: 1.0 / 3.0,
            grids: CvGrid::default(),
            stages: 5,
            folds: 5,
            seed: 0,
            solver: SolverOptions {
                update: BlockUpdate::Exact,
                ..Default::default()
            },
            storage: Storage::Auto,
            condense: true,
            cv_patience: Some(2.0),
        }
    }
}

impl RunConfig {
    /// Baseline spline configuration.
    pub fn spline() -> Self {
        RunConfig {
            mode: Mode::Spline,
            m: None,
            ..Default::default()
        }
    }

    pub fn keep(&self) -> f64 {
        self.keep_fraction.unwrap_or(match self.mode {
            Mode::Multiscale => 0.1,
            Mode::Spline => 1.0,
        })
    }

    pub fn truncation(&self) -> Option<usize> {
        match self.mode {
            Mode::Multiscale => Some(self.m.unwrap_or(self.n)),
            Mode::Spline => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::Multiscale {
            if let Some(m) = self.m {
                if m > self.n {
                    return Err(Error::invalid(format!("truncation level m = {m} exceeds n = {}", self.n)));
                }
            }
        }
        let keep = self.keep();
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::invalid(format!("keep_fraction {keep} is outside (0, 1]")));
        }
        if self.stages == 0 {
            return Err(Error::invalid("stages must be at least 1"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("folds must be at least 2"));
        }
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(Error::invalid("window must be positive"));
        }
        if self.cv_patience.is_some_and(|p| !(p > 0.0)) {
            return Err(Error::invalid("cv_patience must be positive"));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::invalid("solver tolerance and iteration cap must be positive"));
        }
        self.grids.validate()
    }
}

/// Lag and position bases with the Kronecker penalty components.
#[derive(Debug, Clone)]
pub struct Bases {
    pub t: BasisSet,
    pub z: BasisSet,
    pub parts: PenaltyParts,
}

impl Bases {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let t = match cfg.mode {
            Mode::Multiscale => build_multiscale_basis(cfg.p, cfg.n)?,
            Mode::Spline => build_spline_basis(cfg.t_dim)?,
        };
        let z = build_spline_basis(cfg.q)?;
        let parts = PenaltyParts::new(&t, &z);
        Ok(Bases { t, z, parts })
    }

    pub fn dim(&self) -> usize {
        self.t.len() * self.z.len()
    }

    /// `γ(τ, z) = Σ_{j,l} β[l·dim_t + j] w_j(τ) s_l(z)` with `z` already
    /// normalized to `[0, 1]`.
    pub fn kernel_value(&self, beta: &[f64], tau: f64, z: f64) -> Result<f64> {
        if beta.len() != self.dim() {
            return Err(Error::mismatch(format!("{} coefficients for a {}-dimensional space", beta.len(), self.dim())));
        }
        let w = self.t.eval_all(tau)?;
        let s = self.z.eval_all(z)?;
        let dim_t = w.len();
        Ok(s.iter()
            .enumerate()
            .map(|(l, sl)| sl * dot(&w, &beta[l * dim_t..(l + 1) * dim_t]))
            .sum())
    }

    /// `(‖γ‖, ‖γ''_τ‖, ‖γ''_z‖)` from the quadratic forms.
    pub fn kernel_norms(&self, beta: &[f64]) -> (f64, f64, f64) {
        let q = |m: &DMatrix<f64>| quadratic_form(m, beta).max(0.0).sqrt();
        (q(&self.parts.gram), q(&self.parts.lag_rough), q(&self.parts.pos_rough))
    }

    /// The same norms evaluated on explicit kernel sections. Exact
    /// cancellation in the sections keeps null-space kernels at (numerically)
    /// zero norm, which the quadratic forms cannot resolve.
    pub fn section_norms(&self, beta: &[f64]) -> (f64, f64, f64) {
        let (dt, dz) = (self.t.len(), self.z.len());
        let tf: Vec<&PiecewisePolynomial> = self.t.functions().iter().collect();
        let zf: Vec<&PiecewisePolynomial> = self.z.functions().iter().collect();
        let by_z: Vec<PiecewisePolynomial> =
            (0..dz).map(|l| linear_combination(&tf, &beta[l * dt..(l + 1) * dt])).collect();
        let by_z2: Vec<PiecewisePolynomial> = by_z.iter().map(|f| f.derivative(2)).collect();
        let by_t2: Vec<PiecewisePolynomial> = (0..dt)
            .map(|j| {
                let c: Vec<f64> = (0..dz).map(|l| beta[l * dt + j]).collect();
                linear_combination(&zf, &c).derivative(2)
            })
            .collect();
        let form = |fs: &[PiecewisePolynomial], gram: &DMatrix<f64>| -> f64 {
            let mut acc = 0.0;
            for a in 0..fs.len() {
                for b in 0..fs.len() {
                    if gram[(a, b)] != 0.0 {
                        acc += gram[(a, b)] * inner_product(&fs[a], &fs[b]);
                    }
                }
            }
            acc.max(0.0).sqrt()
        };
        (
            form(&by_z, self.z.gram()),
            form(&by_z2, self.z.gram()),
            form(&by_t2, self.t.gram()),
        )
    }
}


/// Truncated, sparsified design blocks for every sensor.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub blocks: Vec<DesignBlock>,
    pub positions: PositionMap,
    /// Columns (full numbering) the solver works on.
    pub kept: Vec<usize>,
    /// Per-sensor block restricted to `kept`.
    pub groups: Vec<CsrMatrix>,
    pub condensed: bool,
}

pub fn assemble_all(dataset: &Dataset, bases: &Bases, cfg: &RunConfig) -> Result<Assembled> {
    assemble_with_map(dataset, bases, cfg, PositionMap::fit(dataset.positions()))
}

/// Assembly with a given position normalization (for prediction on new
/// data).
pub fn assemble_with_map(
    dataset: &Dataset,
    bases: &Bases,
    cfg: &RunConfig,
    positions: PositionMap,
) -> Result<Assembled> {
    let assembler = Assembler::new(dataset, &bases.t, &bases.z, &positions)?;
    let m = cfg.truncation();
    let keep = cfg.keep();
    let blocks = (0..dataset.n_sensors())
        .into_par_iter()
        .map(|k| {
            let b = assembler.block(k, m)?;
            if keep < 1.0 {
                sparsify(&b, keep)
            } else {
                Ok(b)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let dim_t = bases.t.len();
    let kept_t = blocks.first().map_or(dim_t, |b| b.kept_t);
    let condensed = cfg.condense && kept_t < dim_t;
    let (kept, groups) = if condensed {
        (
            kept_columns(dim_t, bases.z.len(), kept_t),
            blocks.iter().map(DesignBlock::condensed_matrix).collect(),
        )
    } else {
        ((0..bases.dim()).collect(), blocks.iter().map(|b| b.matrix.clone()).collect())
    };
    Ok(Assembled {
        blocks,
        positions,
        kept,
        groups,
        condensed,
    })
}

/// Penalty factor on the solver's coordinates plus the map back to full
/// coefficients.
#[derive(Debug, Clone)]
struct Factor {
    chol: Arc<DMatrix<f64>>,
    condensation: Option<Arc<Condensation>>,
}

impl Factor {
    fn expand(&self, beta: Vec<f64>) -> Vec<f64> {
        match &self.condensation {
            Some(c) => c.expand(&beta),
            None => beta,
        }
    }
}

/// Adaptive weights and coefficients after one selection stage.
#[derive(Debug, Clone, Serialize)]
pub struct StageState {
    pub stage: usize,
    /// Sensors entering the stage (0-based).
    pub candidates: Vec<usize>,
    /// Weights used in this stage, aligned with `candidates`.
    pub weights: Vec<PenaltyWeights>,
    /// Sensors with nonzero estimates (0-based).
    pub active: Vec<usize>,
    /// Full coefficient vectors aligned with `active`.
    #[serde(skip)]
    pub betas: Vec<Vec<f64>>,
    /// Weights for the next stage, aligned with `active`.
    pub next_weights: Vec<PenaltyWeights>,
    pub lambda: f64,
    pub phi_t: f64,
    pub phi_z: f64,
    pub lambda_max: f64,
    pub cv_mse: f64,
    pub solver_converged: bool,
}

/// Final ridge estimate on the selected sensors.
#[derive(Debug, Clone, Serialize)]
pub struct KernelEstimate {
    pub sensors: Vec<usize>,
    #[serde(skip)]
    pub betas: Vec<Vec<f64>>,
    pub phi: f64,
    pub phi_t: f64,
    pub phi_z: f64,
    pub cv_mse: f64,
    /// The `φ = 0` system was singular and the smallest ridge weight was
    /// used instead.
    pub ridge_fallback: bool,
    /// `‖Mβ − b‖ / ‖b‖` of the solved normal equations.
    pub normal_residual: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Timings {
    pub assembly: f64,
    pub selection: f64,
    pub estimation: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.assembly + self.selection + self.estimation
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub mode: Mode,
    pub stages: Vec<StageState>,
    pub selected: Vec<usize>,
    pub estimate: Option<KernelEstimate>,
    pub cv_mse: f64,
    pub positions: PositionMap,
    pub timings: Timings,
}

impl FitResult {
    /// Full coefficients per sensor (zero for unselected sensors).
    pub fn coefficients(&self, n_sensors: usize, dim: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; dim]; n_sensors];
        if let Some(e) = &self.estimate {
            for (&k, b) in e.sensors.iter().zip(&e.betas) {
                out[k] = b.clone();
            }
        }
        out
    }
}

/// Everything a fit needs: configuration, bases, assembled blocks and the
/// response.
pub struct Model<'a> {
    pub cfg: &'a RunConfig,
    pub bases: &'a Bases,
    pub assembled: &'a Assembled,
    pub response: &'a [f64],
    folds: Vec<(Vec<usize>, Vec<usize>)>,
}

impl<'a> Model<'a> {
    pub fn new(cfg: &'a RunConfig, bases: &'a Bases, assembled: &'a Assembled, response: &'a [f64]) -> Result<Self> {
        cfg.validate()?;
        let n = response.len();
        if assembled.groups.iter().any(|g| g.nrows() != n) {
            return Err(Error::mismatch("blocks and response differ in length"));
        }
        let folds = fold_indices(n, cfg.folds, cfg.seed)?;
        Ok(Model {
            cfg,
            bases,
            assembled,
            response,
            folds,
        })
    }

    pub fn folds(&self) -> &[(Vec<usize>, Vec<usize>)] {
        &self.folds
    }

    fn factor(&self, w: PenaltyWeights, phi_t: f64, phi_z: f64) -> Result<Factor> {
        let full = self.bases.parts.combine(w.f, phi_t * w.g, phi_z * w.h);
        if self.assembled.condensed {
            let c = Condensation::new(&full, &self.assembled.kept)?;
            let chol = cholesky_lower(&c.reduced)
                .ok_or_else(|| Error::PenaltyNotSpd("condensed penalty".into()))?;
            Ok(Factor {
                chol: Arc::new(chol),
                condensation: Some(Arc::new(c)),
            })
        } else {
            let chol = cholesky_lower(&full).ok_or_else(|| Error::PenaltyNotSpd("group penalty".into()))?;
            Ok(Factor {
                chol: Arc::new(chol),
                condensation: None,
            })
        }
    }

    /// Factors for each weight triple; identical triples share one.
    fn factors(&self, weights: &[PenaltyWeights], phi_t: f64, phi_z: f64) -> Result<Vec<Factor>> {
        let mut cache: Vec<(PenaltyWeights, Factor)> = Vec::new();
        weights
            .iter()
            .map(|w| {
                if let Some((_, f)) = cache.iter().find(|(cw, _)| cw == w) {
                    return Ok(f.clone());
                }
                let f = self.factor(*w, phi_t, phi_z)?;
                cache.push((*w, f.clone()));
                Ok(f)
            })
            .collect()
    }

    fn designs(&self, sensors: &[usize], factors: &[Factor]) -> Result<Vec<GroupDesign>> {
        sensors
            .iter()
            .zip(factors)
            .map(|(&k, f)| substitute_with(&self.assembled.groups[k], f.chol.clone(), self.cfg.storage))
            .collect()
    }

    fn pick(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.response[i]).collect()
    }

    /// CV mean squared error along the `λ` grid for one `(φ_t, φ_z)`. All
    /// folds descend together; grid points skipped by the patience rule
    /// score `+∞`.
    fn cv_path(&self, designs: &[GroupDesign], lambdas: &[f64]) -> Result<Vec<f64>> {
        let nf = self.folds.len() as f64;
        let mut fits = Vec::with_capacity(self.folds.len());
        for (train, test) in &self.folds {
            let problem = GroupProblem::new(
                designs.iter().map(|d| d.select_rows(train)).collect(),
                self.pick(train),
            )?;
            let valid: Vec<GroupDesign> = designs.iter().map(|d| d.select_rows(test)).collect();
            let u = problem.zeros();
            fits.push((problem, valid, self.pick(test), u));
        }
        let mut mse = vec![f64::INFINITY; lambdas.len()];
        let mut best = (f64::INFINITY, 0usize);
        let log_base = self.cfg.grids.log_base.ln();
        // patience counts only once some fold has left the zero solution
        let mut started = false;
        for (li, &lambda) in lambdas.iter().enumerate() {
            let mut total = 0.0;
            for (problem, valid, y_test, u) in fits.iter_mut() {
                let sol = problem.solve(lambda, Some(u), &self.cfg.solver)?;
                *u = sol.u;
                started |= !sol.report.active_groups.is_empty();
                let mut pred = vec![0.0; y_test.len()];
                for (g, uk) in valid.iter().zip(u.iter()) {
                    g.mul_add(1.0, uk, &mut pred);
                }
                total += mean_sq_diff(&pred, y_test) / nf;
            }
            mse[li] = total;
            if total < best.0 {
                best = (total, li);
            } else if !started {
                best.1 = li;
            } else if let Some(span) = self.cfg.cv_patience {
                if (lambdas[best.1] / lambda).ln() / log_base >= span - 1e-9 {
                    break;
                }
            }
        }
        Ok(mse)
    }

    /// One selection stage over `candidates` with the given weights.
    pub fn selection_stage(
        &self,
        stage: usize,
        candidates: &[usize],
        weights: &[PenaltyWeights],
    ) -> Result<StageState> {
        if candidates.len() != weights.len() {
            return Err(Error::mismatch("one weight triple per candidate is required"));
        }
        let grids = &self.cfg.grids;
        let lambdas = grids.lambdas();
        let pairs: Vec<(f64, f64)> = grids
            .phi_t()
            .into_iter()
            .flat_map(|t| grids.phi_z().into_iter().map(move |z| (t, z)))
            .collect();
        let scores = pairs
            .par_iter()
            .map(|&(pt, pz)| {
                let factors = self.factors(weights, pt, pz)?;
                let designs = self.designs(candidates, &factors)?;
                self.cv_path(&designs, &lambdas)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut best: Option<(f64, usize, usize)> = None;
        for (pi, path) in scores.iter().enumerate() {
            for (li, &score) in path.iter().enumerate() {
                let candidate = (score, pi, li);
                best = Some(match best {
                    None => candidate,
                    Some(b) => {
                        if better(candidate, b, &pairs, &lambdas) {
                            candidate
                        } else {
                            b
                        }
                    }
                });
            }
        }
        let (cv_mse, pi, li) = best.ok_or_else(|| Error::invalid("empty hyperparameter grid"))?;
        let (phi_t, phi_z) = pairs[pi];

        let factors = self.factors(weights, phi_t, phi_z)?;
        let designs = self.designs(candidates, &factors)?;
        let problem = GroupProblem::new(designs, self.response.to_vec())?;
        let lambda_max = problem.lambda_max();
        let mut u = problem.zeros();
        let mut converged = true;
        for &lambda in &lambdas[..=li] {
            let sol = problem.solve(lambda, Some(&u), &self.cfg.solver)?;
            converged = sol.report.converged;
            u = sol.u;
        }
        let betas: Vec<Vec<f64>> = problem
            .to_beta(&u)
            .into_iter()
            .zip(&factors)
            .map(|(b, f)| f.expand(b))
            .collect();

        let mut active = Vec::new();
        let mut kept_betas = Vec::new();
        let mut next_weights = Vec::new();
        for ((&k, beta), uk) in candidates.iter().zip(betas).zip(&u) {
            let nonzero = uk.iter().any(|&v| v != 0.0);
            if nonzero && crate::linalg::norm2(&beta) > ACTIVE_THRESHOLD {
                next_weights.push(adaptive_weights(self.bases, &beta));
                active.push(k);
                kept_betas.push(beta);
            }
        }
        Ok(StageState {
            stage,
            candidates: candidates.to_vec(),
            weights: weights.to_vec(),
            active,
            betas: kept_betas,
            next_weights,
            lambda: lambdas[li],
            phi_t,
            phi_z,
            lambda_max,
            cv_mse,
            solver_converged: converged,
        })
    }

    /// Runs up to `cfg.stages` selection stages starting from all sensors
    /// with unit weights.
    pub fn select_sensors(&self) -> Result<Vec<StageState>> {
        let k = self.assembled.groups.len();
        let mut candidates: Vec<usize> = (0..k).collect();
        let mut weights = vec![PenaltyWeights::default(); k];
        let mut states: Vec<StageState> = Vec::new();
        for stage in 1..=self.cfg.stages {
            if candidates.is_empty() {
                break;
            }
            let state = self.selection_stage(stage, &candidates, &weights)?;
            let stable = states.last().is_some_and(|prev| {
                prev.active == state.active && weights_close(&prev.next_weights, &state.next_weights)
            });
            candidates = state.active.clone();
            weights = state.next_weights.clone();
            states.push(state);
            if stable {
                break;
            }
        }
        Ok(states)
    }

    fn dense_design(&self, sensors: &[usize]) -> DMatrix<f64> {
        let d = self.assembled.kept.len();
        let mut x = DMatrix::zeros(self.response.len(), d * sensors.len());
        for (s, &k) in sensors.iter().enumerate() {
            for (i, j, v) in self.assembled.groups[k].triplets() {
                x[(i, s * d + j)] = v;
            }
        }
        x
    }

    fn ridge_penalty(&self, phi: f64, phi_t: f64, phi_z: f64) -> Result<Condensation> {
        let full = self.bases.parts.combine(phi, phi_t, phi_z);
        Condensation::new(&full, &self.assembled.kept)
    }

    /// Ridge estimate of the kernels of `sensors` with CV over
    /// `(φ, φ_t, φ_z)`.
    pub fn estimate_kernels(&self, sensors: &[usize]) -> Result<KernelEstimate> {
        if sensors.is_empty() {
            return Err(Error::invalid("kernel estimation needs at least one sensor"));
        }
        let grids = &self.cfg.grids;
        let ridge_grid = grids.ridge();
        let smallest_ridge = ridge_grid.last().copied();
        let phis = match self.cfg.mode {
            Mode::Multiscale => ridge_grid.clone(),
            Mode::Spline => vec![0.0],
        };
        let x = self.dense_design(sensors);
        let y = DVector::from_column_slice(self.response);
        let fold_data: Vec<_> = self
            .folds
            .iter()
            .map(|(train, test)| {
                let xt = x.select_rows(train);
                let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| self.response[i]));
                (xt.transpose() * &xt, xt.transpose() * yt, x.select_rows(test), self.pick(test))
            })
            .collect();
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;

        let combos: Vec<(f64, f64, f64)> = phis
            .iter()
            .flat_map(|&p| {
                grids
                    .phi_t()
                    .into_iter()
                    .flat_map(move |t| grids.phi_z().into_iter().map(move |z| (p, t, z)))
            })
            .collect();
        let ns = sensors.len();
        // (cv, φ actually used, fallback flag)
        let scores = combos
            .par_iter()
            .map(|&(phi, pt, pz)| -> Result<(f64, f64, bool)> {
                let attempt = |phi: f64| -> Result<Option<f64>> {
                    let pen = self.ridge_penalty(phi, pt, pz)?;
                    let mut total = 0.0;
                    for (gtg, gty, xv, yv) in &fold_data {
                        let Some(beta) = ridge_solve(gtg, gty, &pen.reduced, ns) else {
                            return Ok(None);
                        };
                        let pred = xv * beta;
                        total += mean_sq_diff(pred.as_slice(), yv);
                    }
                    if ridge_solve(&xtx, &xty, &pen.reduced, ns).is_none() {
                        return Ok(None);
                    }
                    Ok(Some(total / fold_data.len() as f64))
                };
                match attempt(phi)? {
                    Some(cv) => Ok((cv, phi, false)),
                    None if phi == 0.0 => {
                        let fallback = smallest_ridge.ok_or_else(|| {
                            Error::Numerical("singular ridge system and no ridge grid to fall back on".into())
                        })?;
                        match attempt(fallback)? {
                            Some(cv) => Ok((cv, fallback, true)),
                            None => Err(Error::Numerical("ridge system is singular".into())),
                        }
                    }
                    None => Err(Error::Numerical(format!("ridge system is singular at phi = {phi}"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let mut best = 0;
        for i in 1..scores.len() {
            let (a, b) = (scores[i].0, scores[best].0);
            let tie = (a - b).abs() <= TIE_RTOL * a.abs().max(b.abs());
            if (!tie && a < b) || (tie && larger_params(combos[i], combos[best])) {
                best = i;
            }
        }
        let (cv_mse, phi, ridge_fallback) = scores[best];
        let (_, phi_t, phi_z) = combos[best];
        let pen = self.ridge_penalty(phi, phi_t, phi_z)?;
        let beta = ridge_solve(&xtx, &xty, &pen.reduced, ns)
            .ok_or_else(|| Error::Numerical("final ridge system is singular".into()))?;
        let m = with_blocks(&xtx, &pen.reduced, ns);
        let resid = (&m * &beta - &xty).norm() / xty.norm().max(f64::MIN_POSITIVE);
        let d = self.assembled.kept.len();
        let betas = (0..ns).map(|s| pen.expand(&beta.as_slice()[s * d..(s + 1) * d])).collect();
        Ok(KernelEstimate {
            sensors: sensors.to_vec(),
            betas,
            phi,
            phi_t,
            phi_z,
            cv_mse,
            ridge_fallback,
            normal_residual: resid,
        })
    }

    /// CV MSE of the zero predictor.
    pub fn null_cv_mse(&self) -> f64 {
        let nf = self.folds.len() as f64;
        self.folds
            .iter()
            .map(|(_, test)| {
                let yv = self.pick(test);
                mean_sq_diff(&vec![0.0; yv.len()], &yv) / nf
            })
            .sum()
    }
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Lower CV score wins; ties go to larger `λ`, then larger `φ_t`, `φ_z`.
fn better(a: (f64, usize, usize), b: (f64, usize, usize), pairs: &[(f64, f64)], lambdas: &[f64]) -> bool {
    if !a.0.is_finite() || !b.0.is_finite() {
        return a.0 < b.0;
    }
    let tie = (a.0 - b.0).abs() <= TIE_RTOL * a.0.abs().max(b.0.abs());
    if !tie {
        return a.0 < b.0;
    }
    let (la, lb) = (lambdas[a.2], lambdas[b.2]);
    if la != lb {
        return la > lb;
    }
    let (pa, pb) = (pairs[a.1], pairs[b.1]);
    if pa.0 != pb.0 {
        return pa.0 > pb.0;
    }
    pa.1 > pb.1
}

fn larger_params(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    a.2 > b.2
}

fn cap(norm: f64) -> f64 {
    if norm < NORM_FLOOR {
        WEIGHT_CAP
    } else {
        (1.0 / norm).min(WEIGHT_CAP)
    }
}

/// Inverse kernel norms used as next-stage weights.
pub fn adaptive_weights(bases: &Bases, beta: &[f64]) -> PenaltyWeights {
    let (f, g, h) = bases.section_norms(beta);
    PenaltyWeights {
        f: cap(f),
        g: cap(g),
        h: cap(h),
    }
}

fn weights_close(a: &[PenaltyWeights], b: &[PenaltyWeights]) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= WEIGHT_STABLE * x.abs().max(y.abs());
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| close(p.f, q.f) && close(p.g, q.g) && close(p.h, q.h))
}

fn with_blocks(gram: &DMatrix<f64>, block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let d = block.nrows();
    let mut m = gram.clone();
    for s in 0..count {
        let mut view = m.view_mut((s * d, s * d), (d, d));
        view += block;
    }
    m
}

/// Solves `(G + blockdiag(P)) β = b`, or `None` when the system is not
/// numerically positive definite.
fn ridge_solve(gram: &DMatrix<f64>, rhs: &DVector<f64>, block: &DMatrix<f64>, count: usize) -> Option<DVector<f64>> {
    let m = with_blocks(gram, block, count);
    let max_diag = m.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let chol = nalgebra::Cholesky::new(m)?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &v| a.min(v * v));
    if !(min_pivot > PIVOT_RTOL * max_diag) {
        return None;
    }
    Some(chol.solve(rhs))
}

/// `ŷ = Σ_k A_k β_k` over the given sensors.
pub fn predict_blocks(blocks: &[DesignBlock], sensors: &[usize], betas: &[Vec<f64>]) -> Result<Vec<f64>> {
    if sensors.len() != betas.len() {
        return Err(Error::mismatch("one coefficient vector per sensor is required"));
    }
    let n = blocks.first().map_or(0, DesignBlock::nrows);
    let mut y = vec![0.0; n];
    for (&k, beta) in sensors.iter().zip(betas) {
        let block = blocks
            .get(k)
            .ok_or_else(|| Error::mismatch(format!("sensor {k} has no design block")))?;
        if beta.len() != block.ncols() {
            return Err(Error::mismatch(format!(
                "sensor {k}: {} coefficients for {} columns",
                beta.len(),
                block.ncols()
            )));
        }
        block.matrix.mul_vec_add(1.0, beta, &mut y);
    }
    Ok(y)
}

/// Predictions of a fit on `dataset`, assembled with the fit's position
/// normalization.
pub fn predict(fit: &FitResult, dataset: &Dataset, cfg: &RunConfig) -> Result<Vec<f64>> {
    if fit.mode != cfg.mode {
        return Err(Error::mismatch("fit and configuration use different bases"));
    }
    let bases = Bases::new(cfg)?;
    let assembled = assemble_with_map(dataset, &bases, cfg, fit.positions)?;
    match &fit.estimate {
        Some(e) => predict_blocks(&assembled.blocks, &e.sensors, &e.betas),
        None => Ok(vec![0.0; dataset.n_obs()]),
    }
}

/// Assembly, multistage selection and ridge estimation.
pub fn run_full(dataset: &Dataset, cfg: &RunConfig) -> Result<FitResult> {
    cfg.validate()?;
    if (cfg.window - dataset.window()).abs() > 1e-12 * cfg.window {
        return Err(Error::mismatch(format!(
            "dataset window {} differs from configured window {}",
            dataset.window(),
            cfg.window
        )));
    }
    let clock = Instant::now();
    let bases = Bases::new(cfg)?;
    let assembled = assemble_all(dataset, &bases, cfg)?;
    let assembly = clock.elapsed().as_secs_f64();

    let model = Model::new(cfg, &bases, &assembled, dataset.responses())?;
    let clock = Instant::now();
    let stages = model.select_sensors()?;
    let selection = clock.elapsed().as_secs_f64();

    let selected = stages.last().map(|s| s.active.clone()).unwrap_or_default();
    let clock = Instant::now();
    let estimate = if selected.is_empty() {
        None
    } else {
        Some(model.estimate_kernels(&selected)?)
    };
    let estimation = clock.elapsed().as_secs_f64();
    let cv_mse = estimate.as_ref().map_or_else(|| model.null_cv_mse(), |e| e.cv_mse);
    Ok(FitResult {
        mode: cfg.mode,
        stages,
        selected,
        estimate,
        cv_mse,
        positions: assembled.positions,
        timings: Timings {
            assembly,
            selection,
            estimation,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig {
            m: Some(3),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            keep_fraction: Some(0.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            stages: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(RunConfig::default().keep(), 0.1);
        assert_eq!(RunConfig::spline().keep(), 1.0);
    }

    #[test]
    fn ties_prefer_parsimony() {
        let pairs = [(1.0, 1.0), (2.0, 1.0)];
        let lambdas = [1.0, 0.5];
        assert!(better((1.0, 0, 0), (1.0, 0, 1), &pairs, &lambdas));
        assert!(better((1.0, 1, 1), (1.0, 0, 1), &pairs, &lambdas));
        assert!(better((0.5, 0, 1), (1.0, 1, 0), &pairs, &lambdas));
        // grid points skipped by the patience rule never win a tie
        assert!(!better((f64::INFINITY, 0, 0), (1.0, 0, 1), &pairs, &lambdas));
        assert!(better((1.0, 0, 1), (f64::INFINITY, 0, 0), &pairs, &lambdas));
    }

    #[test]
    fn weight_cap_for_flat_kernels() {
        let cfg = RunConfig::default();
        let bases = Bases::new(&cfg).unwrap();
        // constant in τ and z: only the level-0 constant combination
        let mut beta = vec![0.0; bases.dim()];
        // w00 + w01 + w02 + w03 = 1 (Lagrange), Σ s_l = 1
        for l in 0..10 {
            for j in 0..4 {
                beta[l * 16 + j] = 1.0;
            }
        }
        assert!((bases.kernel_value(&beta, 0.3, 0.7).unwrap() - 1.0).abs() < 1e-12);
        let w = adaptive_weights(&bases, &beta);
        assert!((w.f - 1.0).abs() < 1e-10);
        assert_eq!(w.g, WEIGHT_CAP);
        assert_eq!(w.h, WEIGHT_CAP);
        // quadratic forms agree with the sections on a generic kernel
        let beta: Vec<f64> = (0..bases.dim()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let (a, b, c) = bases.kernel_norms(&beta);
        let (x, y, z) = bases.section_norms(&beta);
        assert!((a - x).abs() < 1e-8 * a && (b - y).abs() < 1e-8 * b && (c - z).abs() < 1e-8 * c);
    }

    #[test]
    fn ridge_orthonormal_closed_form() {
        // X with orthonormal columns, P = φ I
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let y = DVector::from_column_slice(&[2.0, -4.0, 1.0]);
        let phi = 0.5;
        let b = ridge_solve(&(x.transpose() * &x), &(x.transpose() * &y), &(DMatrix::identity(2, 2) * phi), 1).unwrap();
        assert!((b[0] - 2.0 / 1.5).abs() < 1e-14);
        assert!((b[1] + 4.0 / 1.5).abs() < 1e-14);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(ridge_solve(&singular, &DVector::zeros(2), &DMatrix::zeros(2, 2), 1).is_none());
    }
}
