//! Side-by-side comparison of lag bases on one dataset: timings, storage
//! and the magnitude distribution of design-block entries.

use serde::Serialize;

use crate::assembly::Assembler;
use crate::error::{Error, Result};
use crate::pipeline::{assemble_all, run_full, Bases, Mode, RunConfig, Timings};
use crate::signal::{Dataset, PositionMap};

/// Decades of `|entry| / max|entry|` covered by the histogram; everything
/// smaller falls in the first bin.
pub const DECADES: usize = 8;

/// Bin edges of the relative-magnitude histogram, ascending:
/// `[0, 1e-8), [1e-8, 1e-7), …, [1e-1, 1]`.
pub fn histogram_edges() -> Vec<f64> {
    let mut e = vec![0.0];
    e.extend((0..=DECADES).rev().map(|d| 10f64.powi(-(d as i32))));
    e
}

/// Magnitude statistics of the untruncated, unsparsified blocks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryStats {
    pub entries: usize,
    pub max_abs: f64,
    /// Counts per histogram bin.
    pub histogram: Vec<usize>,
    /// Fraction of all `N · dim` entries below `1e-3 · max_abs`.
    pub small_fraction: f64,
    /// The same fraction among stored (structurally nonzero) entries.
    pub stored_small_fraction: f64,
}

pub fn entry_stats(dataset: &Dataset, cfg: &RunConfig) -> Result<EntryStats> {
    let bases = Bases::new(cfg)?;
    let positions = PositionMap::fit(dataset.positions());
    let assembler = Assembler::new(dataset, &bases.t, &bases.z, &positions)?;
    let blocks = (0..dataset.n_sensors())
        .map(|k| assembler.block(k, None))
        .collect::<Result<Vec<_>>>()?;
    let entries: usize = blocks.iter().map(|b| b.nrows() * b.ncols()).sum();
    let max_abs = blocks
        .iter()
        .flat_map(|b| b.matrix.values().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if !(max_abs > 0.0) {
        return Err(Error::invalid("design blocks are identically zero"));
    }
    let mut histogram = vec![0usize; DECADES + 1];
    let mut stored = 0;
    for v in blocks.iter().flat_map(|b| b.matrix.values().iter()) {
        stored += 1;
        let r = v.abs() / max_abs;
        let bin = if r <= 0.0 {
            0
        } else {
            // decade index counted up from 1e-8
            ((r.log10().floor() as i64) + DECADES as i64 + 1).clamp(0, DECADES as i64) as usize
        };
        histogram[bin] += 1;
    }
    // implicit zeros of the sparse storage
    histogram[0] += entries - stored;
    let threshold = 1e-3 * max_abs;
    let large = blocks
        .iter()
        .flat_map(|b| b.matrix.values().iter())
        .filter(|v| v.abs() >= threshold)
        .count();
    Ok(EntryStats {
        entries,
        max_abs,
        histogram,
        small_fraction: (entries - large) as f64 / entries as f64,
        stored_small_fraction: (stored - large) as f64 / stored.max(1) as f64,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeBench {
    pub mode: Mode,
    pub timings: Timings,
    /// Stored entries of the blocks the solver uses over `N · dim`, per
    /// sensor.
    pub nnz_fraction: Vec<f64>,
    pub entries: EntryStats,
    /// 1-based selected sensors.
    pub selected: Vec<usize>,
    pub cv_mse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub histogram_edges: Vec<f64>,
    pub modes: Vec<ModeBench>,
}

pub fn bench_mode(dataset: &Dataset, cfg: &RunConfig) -> Result<ModeBench> {
    let bases = Bases::new(cfg)?;
    let assembled = assemble_all(dataset, &bases, cfg)?;
    let nnz_fraction = assembled
        .blocks
        .iter()
        .map(|b| b.matrix.nnz() as f64 / (b.nrows() * b.ncols()) as f64)
        .collect();
    let fit = run_full(dataset, cfg)?;
    Ok(ModeBench {
        mode: cfg.mode,
        timings: fit.timings,
        nnz_fraction,
        entries: entry_stats(dataset, cfg)?,
        selected: fit.selected.iter().map(|k| k + 1).collect(),
        cv_mse: fit.cv_mse,
    })
}

pub fn bench(dataset: &Dataset, configs: &[RunConfig]) -> Result<BenchReport> {
    Ok(BenchReport {
        histogram_edges: histogram_edges(),
        modes: configs.iter().map(|c| bench_mode(dataset, c)).collect::<Result<_>>()?,
    })
}

impl BenchReport {
    /// One row per mode: timings, mean stored fraction, small-entry
    /// fraction, cv error, then histogram counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,assembly,selection,estimation,total,nnz_fraction,small_fraction,stored_small_fraction,cv_mse");
        for w in self.histogram_edges.windows(2) {
            out.push_str(&format!(",bin_{:e}_{:e}", w[0], w[1]));
        }
        out.push('\n');
        for m in &self.modes {
            let nnz = m.nnz_fraction.iter().sum::<f64>() / m.nnz_fraction.len().max(1) as f64;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}",
                crate::sim::mode_name(m.mode),
                m.timings.assembly,
                m.timings.selection,
                m.timings.estimation,
                m.timings.total(),
                nnz,
                m.entries.small_fraction,
                m.entries.stored_small_fraction,
                m.cv_mse
            ));
            for c in &m.entries.histogram {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthetic_dataset, SyntheticConfig};

    fn small() -> Dataset {
        synthetic_dataset(&SyntheticConfig {
            sensors: 3,
            observations: 30,
            duration: 3.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn edges_are_ascending() {
        let e = histogram_edges();
        assert_eq!(e.len(), DECADES + 2);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*e.last().unwrap(), 1.0);
    }

    #[test]
    fn histogram_counts_every_entry() {
        let d = small();
        for cfg in [RunConfig::default(), RunConfig::spline()] {
            let s = entry_stats(&d, &cfg).unwrap();
            assert_eq!(s.histogram.iter().sum::<usize>(), s.entries);
            assert!(s.histogram[DECADES] > 0, "the maximum lands in the top bin");
            assert!((0.0..=1.0).contains(&s.small_fraction));
            assert!(s.stored_small_fraction <= s.small_fraction);
        }
    }

    #[test]
    fn multiscale_has_more_small_entries() {
        let d = small();
        let ms = entry_stats(&d, &RunConfig::default()).unwrap();
        let sp = entry_stats(&d, &RunConfig::spline()).unwrap();
        assert!(ms.small_fraction > sp.small_fraction);
    }
}
