//! Correlated-noise simulation study: responses from known kernels, repeated
//! selection runs and the size / false-positive / CV-error / time metrics.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, norm2};
use crate::pipeline::{run_full, Mode, RunConfig};
use crate::signal::Dataset;
use crate::synth::{synthetic_dataset, SyntheticConfig, Truth};

/// Gaussian noise with `Σ_ij = σ_h² (δ_ij + θ exp(−(i−j)²/η²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub theta: f64,
    pub eta: f64,
    pub sigma_h: f64,
    pub len: usize,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0 && self.eta > 0.0 && self.sigma_h > 0.0)
            || ![self.theta, self.eta, self.sigma_h].iter().all(|v| v.is_finite())
        {
            return Err(Error::invalid("noise model needs theta >= 0, eta > 0, sigma_h > 0"));
        }
        if self.len == 0 {
            return Err(Error::invalid("noise length must be positive"));
        }
        Ok(())
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let s2 = self.sigma_h * self.sigma_h;
        DMatrix::from_fn(self.len, self.len, |i, j| {
            let d = i.abs_diff(j) as f64;
            let delta = if i == j { 1.0 } else { 0.0 };
            s2 * (delta + self.theta * (-(d * d) / (self.eta * self.eta)).exp())
        })
    }

    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        self.validate()?;
        cholesky_lower(&self.covariance())
            .ok_or_else(|| Error::Numerical(format!("noise covariance (theta {}, eta {}) is not SPD", self.theta, self.eta)))
    }
}

/// `ε = L g` with `g` standard normal from `seed`.
pub fn sample_noise(model: &NoiseModel, seed: u64) -> Result<Vec<f64>> {
    Ok(sample_with_factor(&model.cholesky()?, seed))
}

pub fn sample_with_factor(chol: &DMatrix<f64>, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<f64> = (0..chol.nrows()).map(|_| rng.sample(StandardNormal)).collect();
    let e = chol * nalgebra::DVector::from_column_slice(&g);
    e.as_slice().to_vec()
}

/// Truth responses plus noise.
pub fn generate_responses(dataset: &Dataset, truth: &Truth, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != dataset.n_obs() {
        return Err(Error::mismatch("noise length differs from the observation count"));
    }
    let clean = truth.clean_response(dataset)?;
    Ok(clean.iter().zip(noise).map(|(a, b)| a + b).collect())
}

/// `σ_h` giving `‖signal‖ / E‖ε‖ = snr` for dependence `theta`.
pub fn sigma_for_snr(clean: &[f64], snr: f64, theta: f64) -> f64 {
    norm2(clean) / (snr * (clean.len() as f64 * (1.0 + theta)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub thetas: Vec<f64>,
    pub etas: Vec<f64>,
    pub replicates: usize,
    pub modes: Vec<Mode>,
    pub seed: u64,
    /// `σ_h`; derived from `snr` at `snr_theta` when absent.
    pub sigma_h: Option<f64>,
    pub snr: f64,
    pub snr_theta: f64,
    /// 1-based sensors that never count as false positives besides the truth.
    pub also_excluded: Vec<usize>,
    pub data: SyntheticConfig,
    pub multiscale: RunConfig,
    pub spline: RunConfig,
}

impl Default for SimSettings {
    fn default() -> Self {
        let stages = 2;
        SimSettings {
            thetas: vec![0.25, 10.0, 100.0],
            etas: vec![10.0, 100.0],
            replicates: 20,
            modes: vec![Mode::Spline, Mode::Multiscale],
            seed: 7,
            sigma_h: None,
            snr: 10.0,
            snr_theta: 0.25,
            also_excluded: vec![5],
            data: SyntheticConfig::default(),
            multiscale: RunConfig {
                stages,
                ..Default::default()
            },
            spline: RunConfig {
                stages,
                ..RunConfig::spline()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRow {
    pub theta: f64,
    pub eta: f64,
    pub mode: Mode,
    pub replicate: usize,
    /// 1-based.
    pub selected: Vec<usize>,
    pub size: usize,
    pub false_positives: usize,
    pub truth_selected: bool,
    pub cv_mse: f64,
    #[serde(skip)]
    pub time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SettingSummary {
    pub theta: f64,
    pub eta: f64,
    pub mode: Mode,
    pub replicates: usize,
    pub mean_size: f64,
    pub size_std_error: f64,
    pub mean_false_positive: f64,
    pub truth_selected: usize,
    pub mean_cv_mse: f64,
    #[serde(skip)]
    pub mean_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub sigma_h: f64,
    pub truth: Vec<usize>,
    pub summaries: Vec<SettingSummary>,
    pub rows: Vec<ReplicateRow>,
}

impl SimReport {
    /// One CSV line per replicate.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("theta,eta,mode,replicate,size,false_positives,truth_selected,cv_mse,time,selected\n");
        for r in &self.rows {
            let sel: Vec<String> = r.selected.iter().map(|s| s.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.theta,
                r.eta,
                mode_name(r.mode),
                r.replicate,
                r.size,
                r.false_positives,
                r.truth_selected,
                r.cv_mse,
                r.time,
                sel.join(" ")
            ));
        }
        out
    }

    /// Mean times per setting, kept apart from the deterministic report.
    pub fn timings(&self) -> Vec<(f64, f64, Mode, f64)> {
        self.summaries.iter().map(|s| (s.theta, s.eta, s.mode, s.mean_time)).collect()
    }
}

pub fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Multiscale => "multiscale",
        Mode::Spline => "spline",
    }
}

/// Aggregates per-replicate rows of one setting and mode.
pub fn summarize(theta: f64, eta: f64, mode: Mode, rows: &[&ReplicateRow]) -> SettingSummary {
    let j = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ReplicateRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / j;
    let mean_size = mean(&|r| r.size as f64);
    let var = if rows.len() > 1 {
        rows.iter().map(|r| (r.size as f64 - mean_size).powi(2)).sum::<f64>() / (j - 1.0)
    } else {
        0.0
    };
    SettingSummary {
        theta,
        eta,
        mode,
        replicates: rows.len(),
        mean_size,
        size_std_error: (var / j).sqrt(),
        mean_false_positive: mean(&|r| r.false_positives as f64),
        truth_selected: rows.iter().filter(|r| r.truth_selected).count(),
        mean_cv_mse: mean(&|r| r.cv_mse),
        mean_time: mean(&|r| r.time),
    }
}

/// Replicate `j` draws its noise from `seed + j`, shared by every setting
/// and mode.
pub fn run_sim(settings: &SimSettings, truth: &Truth) -> Result<SimReport> {
    if settings.replicates == 0 {
        return Err(Error::invalid("at least one replicate is required"));
    }
    let dataset = synthetic_dataset(&settings.data)?;
    truth.validate(dataset.n_sensors())?;
    let clean = truth.clean_response(&dataset)?;
    let sigma_h = settings
        .sigma_h
        .unwrap_or_else(|| sigma_for_snr(&clean, settings.snr, settings.snr_theta));
    let truth_set = truth.sensors();
    let excluded: Vec<usize> = truth_set
        .iter()
        .copied()
        .chain(settings.also_excluded.iter().map(|s| s.saturating_sub(1)))
        .collect();

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &theta in &settings.thetas {
        for &eta in &settings.etas {
            let model = NoiseModel {
                theta,
                eta,
                sigma_h,
                len: dataset.n_obs(),
            };
            let chol = model.cholesky()?;
            for &mode in &settings.modes {
                let cfg = match mode {
                    Mode::Multiscale => &settings.multiscale,
                    Mode::Spline => &settings.spline,
                };
                let mut setting_rows = Vec::with_capacity(settings.replicates);
                for j in 0..settings.replicates {
                    let noise = sample_with_factor(&chol, settings.seed.wrapping_add(j as u64));
                    let y: Vec<f64> = clean.iter().zip(&noise).map(|(a, b)| a + b).collect();
                    let data = dataset.with_responses(y)?;
                    let clock = Instant::now();
                    let fit = run_full(&data, cfg)?;
                    let time = clock.elapsed().as_secs_f64();
                    let selected = fit.selected.clone();
                    setting_rows.push(ReplicateRow {
                        theta,
                        eta,
                        mode,
                        replicate: j,
                        size: selected.len(),
                        false_positives: selected.iter().filter(|k| !excluded.contains(k)).count(),
                        truth_selected: truth_set.iter().all(|k| selected.contains(k)),
                        selected: selected.iter().map(|k| k + 1).collect(),
                        cv_mse: fit.cv_mse,
                        time,
                    });
                }
                let refs: Vec<&ReplicateRow> = setting_rows.iter().collect();
                summaries.push(summarize(theta, eta, mode, &refs));
                rows.extend(setting_rows);
            }
        }
    }
    Ok(SimReport {
        sigma_h,
        truth: truth_set.iter().map(|k| k + 1).collect(),
        summaries,
        rows,
    })
}
