//! Design blocks: exact integrals of historical windows against the lag
//! basis, tensored with the position splines, plus level truncation and
//! magnitude sparsification.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::basis::{BasisKind, BasisSet};
use crate::error::{Error, Result};
use crate::linalg::power_iteration;
use crate::poly::inner_product;
use crate::signal::{Dataset, PositionMap};
use crate::sparse::CsrMatrix;

/// Sparse `N × (dim_t · dim_z)` design matrix of one sensor. Column
/// `l * dim_t + j` pairs lag function `j` with position function `l`, which
/// matches stacking the columns of the `dim_t × dim_z` coefficient matrix.
#[derive(Debug, Clone, Serialize)]
pub struct DesignBlock {
    pub sensor: usize,
    pub matrix: CsrMatrix,
    pub dim_t: usize,
    pub dim_z: usize,
    /// Leading lag functions that were computed; the rest are zero.
    pub kept_t: usize,
    pub truncation_level: Option<usize>,
    /// Stored nonzeros over `rows · cols`.
    pub kept_fraction: f64,
}

impl DesignBlock {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.dim_t * self.dim_z
    }

    /// Column indices that can be nonzero after truncation.
    pub fn kept_columns(&self) -> Vec<usize> {
        kept_columns(self.dim_t, self.dim_z, self.kept_t)
    }

    /// The block restricted to its kept columns, renumbered as
    /// `l * kept_t + j`.
    pub fn condensed_matrix(&self) -> CsrMatrix {
        let (dim_t, kept_t) = (self.dim_t, self.kept_t);
        self.matrix.remap_columns(kept_t * self.dim_z, |c| {
            let (l, j) = (c / dim_t, c % dim_t);
            (j < kept_t).then_some(l * kept_t + j)
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let matrix = self.matrix.select_rows(rows);
        DesignBlock {
            kept_fraction: fraction(&matrix, self.ncols()),
            matrix,
            ..self.clone()
        }
    }
}

pub fn kept_columns(dim_t: usize, dim_z: usize, kept_t: usize) -> Vec<usize> {
    (0..dim_z)
        .flat_map(|l| (0..kept_t).map(move |j| l * dim_t + j))
        .collect()
}

fn fraction(m: &CsrMatrix, ncols: usize) -> f64 {
    let total = m.nrows() * ncols;
    if total == 0 {
        0.0
    } else {
        m.nnz() as f64 / total as f64
    }
}

/// Builds design blocks for one dataset and one pair of bases. Position
/// spline values are shared by all sensors and computed once.
pub struct Assembler<'a> {
    dataset: &'a Dataset,
    t_basis: &'a BasisSet,
    z_basis: &'a BasisSet,
    z_features: Vec<Vec<(usize, f64)>>,
}

impl<'a> Assembler<'a> {
    pub fn new(
        dataset: &'a Dataset,
        t_basis: &'a BasisSet,
        z_basis: &'a BasisSet,
        positions: &PositionMap,
    ) -> Result<Self> {
        let z_features = dataset
            .positions()
            .iter()
            .map(|&z| {
                let zn = positions.apply(z);
                Ok(z_basis
                    .eval_all(zn)?
                    .into_iter()
                    .enumerate()
                    .filter(|(_, v)| *v != 0.0)
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Assembler {
            dataset,
            t_basis,
            z_basis,
            z_features,
        })
    }

    /// Number of leading lag functions retained at truncation level `m`.
    pub fn kept_t(&self, m: Option<usize>) -> Result<usize> {
        match (self.t_basis.kind(), m) {
            (BasisKind::Multiscale { levels, .. }, Some(m)) if m > levels => Err(Error::mismatch(format!(
                "truncation level {m} exceeds basis level {levels}"
            ))),
            (BasisKind::Multiscale { .. }, Some(m)) => Ok(self.t_basis.prefix_through_level(m)),
            _ => Ok(self.t_basis.len()),
        }
    }

    /// `N × kept` matrix of `∫_0^1 X_ik(τ) w_j(τ) dτ` for the leading `kept`
    /// lag functions.
    pub fn lag_integrals(&self, sensor: usize, kept: usize) -> Result<DMatrix<f64>> {
        if sensor >= self.dataset.n_sensors() {
            return Err(Error::mismatch(format!(
                "sensor {sensor} out of range ({} sensors)",
                self.dataset.n_sensors()
            )));
        }
        let n = self.dataset.n_obs();
        let funcs = &self.t_basis.functions()[..kept];
        let mut out = DMatrix::zeros(n, kept);
        for i in 0..n {
            let x = self.dataset.history(sensor, i)?;
            for (j, w) in funcs.iter().enumerate() {
                out[(i, j)] = inner_product(&x, w);
            }
        }
        Ok(out)
    }

    /// Design block of `sensor` truncated at lag level `m` (ignored for a
    /// spline lag basis). Truncated columns are never computed.
    pub fn block(&self, sensor: usize, m: Option<usize>) -> Result<DesignBlock> {
        let kept_t = self.kept_t(m)?;
        let dim_t = self.t_basis.len();
        let dim_z = self.z_basis.len();
        let c = self.lag_integrals(sensor, kept_t)?;
        let rows = self
            .z_features
            .iter()
            .enumerate()
            .map(|(i, zf)| {
                let mut row = Vec::with_capacity(zf.len() * kept_t);
                for &(l, s) in zf {
                    for j in 0..kept_t {
                        row.push((l * dim_t + j, s * c[(i, j)]));
                    }
                }
                row
            })
            .collect();
        let matrix = CsrMatrix::from_rows(dim_t * dim_z, rows)?;
        let truncation_level = match self.t_basis.kind() {
            BasisKind::Multiscale { levels, .. } => Some(m.unwrap_or(levels)),
            BasisKind::Spline { .. } => None,
        };
        Ok(DesignBlock {
            sensor,
            kept_fraction: fraction(&matrix, dim_t * dim_z),
            matrix,
            dim_t,
            dim_z,
            kept_t,
            truncation_level,
        })
    }
}

/// Convenience wrapper around [`Assembler::block`].
pub fn assemble_block(
    dataset: &Dataset,
    sensor: usize,
    t_basis: &BasisSet,
    z_basis: &BasisSet,
    positions: &PositionMap,
    m: Option<usize>,
) -> Result<DesignBlock> {
    Assembler::new(dataset, t_basis, z_basis, positions)?.block(sensor, m)
}

/// Keeps the `⌈keep · rows · cols⌉` largest-magnitude entries, breaking ties
/// by (row, col) order.
pub fn sparsify(block: &DesignBlock, keep: f64) -> Result<DesignBlock> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::invalid(format!("keep fraction {keep} is outside (0, 1]")));
    }
    let total = block.nrows() * block.ncols();
    let budget = ((keep * total as f64) - 1e-9).ceil().max(0.0) as usize;
    if block.matrix.nnz() <= budget {
        return Ok(block.clone());
    }
    let mut entries: Vec<(usize, usize, f64)> = block.matrix.triplets().collect();
    // stable sort keeps row-major order among equal magnitudes
    entries.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()));
    entries.truncate(budget);
    let mut rows = vec![Vec::new(); block.nrows()];
    for (i, j, v) in entries {
        rows[i].push((j, v));
    }
    let matrix = CsrMatrix::from_rows(block.ncols(), rows)?;
    Ok(DesignBlock {
        kept_fraction: fraction(&matrix, block.ncols()),
        matrix,
        ..block.clone()
    })
}

/// Spectral norm of the columns a level-`m` truncation drops from an
/// untruncated block.
pub fn truncation_error(full: &DesignBlock, t_basis: &BasisSet, m: usize) -> Result<f64> {
    if full.kept_t != full.dim_t {
        return Err(Error::invalid("truncation error needs an untruncated block"));
    }
    if t_basis.len() != full.dim_t {
        return Err(Error::mismatch("lag basis does not match the block"));
    }
    let keep = t_basis.prefix_through_level(m);
    let dim_t = full.dim_t;
    let dropped = full.matrix.retain(|_, j, _| j % dim_t >= keep);
    if dropped.nnz() == 0 {
        return Ok(0.0);
    }
    Ok(spectral_norm(&dropped))
}

/// `‖A‖₂` via power iteration on `AᵀA`.
pub fn spectral_norm(a: &CsrMatrix) -> f64 {
    let mut tmp = vec![0.0; a.nrows()];
    power_iteration(a.ncols(), |x, out| {
        a.mul_vec(x, &mut tmp);
        a.tmul_vec(&tmp, out);
    })
    .max(0.0)
    .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_multiscale_basis, build_spline_basis};

    fn dataset(channel: impl Fn(f64) -> f64, n: usize) -> Dataset {
        let grid: Vec<f64> = (0..=400).map(|i| i as f64 / 100.0).collect();
        let values: Vec<f64> = grid.iter().map(|&t| channel(t)).collect();
        let times: Vec<f64> = (0..n).map(|i| 0.5 + 3.0 * i as f64 / n as f64).collect();
        let positions: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        Dataset::new(grid, vec![values], times, positions, vec![0.0; n], 1.0 / 3.0).unwrap()
    }

    #[test]
    fn constant_signal_kills_wavelet_columns() {
        let d = dataset(|_| 1.0, 12);
        let t = build_multiscale_basis(3, 2).unwrap();
        let z = build_spline_basis(10).unwrap();
        let map = PositionMap::fit(d.positions());
        let b = assemble_block(&d, 0, &t, &z, &map, Some(2)).unwrap();
        for (_, j, v) in b.matrix.triplets() {
            if t.level(j % 16) >= 1 {
                assert!(v.abs() < 1e-13, "col {j}: {v}");
            }
        }
    }

    #[test]
    fn entry_for_first_lagrange_cubic() {
        // positions all at the left end so that s_1(z) = 1
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 50.0).collect();
        let d = Dataset::new(grid, vec![vec![1.0; 101]], vec![1.0, 1.5], vec![0.0, 0.0], vec![0.0; 2], 0.5)
            .unwrap();
        let t = build_multiscale_basis(3, 2).unwrap();
        let z = build_spline_basis(10).unwrap();
        let map = PositionMap { min: 0.0, max: 1.0 };
        let b = assemble_block(&d, 0, &t, &z, &map, Some(2)).unwrap();
        assert!((b.matrix.get(0, 0) - 11.0 / 24.0).abs() < 1e-14);
        assert!((b.matrix.get(1, 0) - 11.0 / 24.0).abs() < 1e-14);
    }

    #[test]
    fn truncation_drops_trailing_levels() {
        let d = dataset(|t| (2.0 * t).sin() + 0.3 * t, 10);
        let t = build_multiscale_basis(3, 2).unwrap();
        let z = build_spline_basis(6).unwrap();
        let map = PositionMap::fit(d.positions());
        let a = Assembler::new(&d, &t, &z, &map).unwrap();
        let full = a.block(0, Some(2)).unwrap();
        let trunc = a.block(0, Some(1)).unwrap();
        assert_eq!(trunc.kept_t, 8);
        for i in 0..10 {
            for c in 0..full.ncols() {
                let want = if c % 16 < 8 { full.matrix.get(i, c) } else { 0.0 };
                assert_eq!(trunc.matrix.get(i, c), want);
            }
        }
        assert!(a.block(0, Some(3)).is_err());
        assert_eq!(truncation_error(&full, &t, 2).unwrap(), 0.0);
    }

    #[test]
    fn sparsify_counts() {
        let d = dataset(|t| (3.0 * t).cos() + 1.5, 20);
        let t = build_spline_basis(8).unwrap();
        let z = build_spline_basis(5).unwrap();
        let map = PositionMap::fit(d.positions());
        let b = assemble_block(&d, 0, &t, &z, &map, None).unwrap();
        let same = sparsify(&b, 1.0).unwrap();
        assert_eq!(same.matrix, b.matrix);
        let s = sparsify(&b, 0.1).unwrap();
        assert_eq!(s.matrix.nnz(), (0.1f64 * 20.0 * 40.0).ceil() as usize);
        let min_kept = s.matrix.values().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let dropped_max = b
            .matrix
            .triplets()
            .filter(|&(i, j, _)| s.matrix.get(i, j) == 0.0)
            .fold(0.0f64, |m, (_, _, v)| m.max(v.abs()));
        assert!(min_kept >= dropped_max);
        assert!(sparsify(&b, 0.0).is_err());
        assert!(sparsify(&b, 1.5).is_err());
    }

    #[test]
    fn sparsify_ties_prefer_earlier_entries() {
        let m = CsrMatrix::from_rows(2, vec![vec![(0, 1.0), (1, -1.0)], vec![(0, 1.0), (1, 0.5)]]).unwrap();
        let b = DesignBlock {
            sensor: 0,
            kept_fraction: 1.0,
            matrix: m,
            dim_t: 2,
            dim_z: 1,
            kept_t: 2,
            truncation_level: None,
        };
        let s = sparsify(&b, 0.5).unwrap();
        assert_eq!(s.matrix.get(0, 0), 1.0);
        assert_eq!(s.matrix.get(0, 1), -1.0);
        assert_eq!(s.matrix.get(1, 0), 0.0);
        assert_eq!(s.kept_fraction, 0.5);
    }
}
