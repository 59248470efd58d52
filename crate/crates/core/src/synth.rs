//! Synthetic stand-ins for recorded data: smooth random multichannel
//! signals, a slowly varying position trace and ground-truth kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{build_multiscale_basis, build_spline_basis};
use crate::error::{Error, Result};
use crate::pipeline::{assemble_all, predict_blocks, Bases, Mode, RunConfig};
use crate::signal::Dataset;

const TRUTH_FIXTURE: &str = include_str!("../fixtures/truth.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub sensors: usize,
    pub observations: usize,
    /// Signal record length.
    pub duration: f64,
    /// Signal sampling step.
    pub step: f64,
    /// Gaussian smoothing length of the signals.
    pub smoothing: f64,
    pub window: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            sensors: 16,
            observations: 198,
            duration: 10.0,
            step: 0.005,
            smoothing: 0.05,
            window: 1.0 / 3.0,
            amplitude: 1.0,
            seed: 2021,
        }
    }
}

/// Gaussian-smoothed white noise standardized to unit sample variance and
/// scaled by `amplitude`.
pub fn smooth_noise(rng: &mut ChaCha8Rng, len: usize, step: f64, smoothing: f64, amplitude: f64) -> Vec<f64> {
    let half = (4.0 * smoothing / step).ceil() as usize;
    let raw: Vec<f64> = (0..len + 2 * half).map(|_| rng.sample(StandardNormal)).collect();
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let s = (i as f64 - half as f64) * step / smoothing;
            (-0.5 * s * s).exp()
        })
        .collect();
    let mut out: Vec<f64> = (0..len)
        .map(|i| kernel.iter().zip(&raw[i..i + 2 * half + 1]).map(|(k, r)| k * r).sum())
        .collect();
    let mean = out.iter().sum::<f64>() / len as f64;
    let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
    let scale = amplitude / var.sqrt().max(f64::MIN_POSITIVE);
    out.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    out
}

/// Dataset with synthetic signals and positions and zero responses.
pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.sensors == 0 || cfg.observations < 2 {
        return Err(Error::invalid("need at least one sensor and two observations"));
    }
    if !(cfg.step > 0.0 && cfg.duration > cfg.window + 0.2 && cfg.smoothing > 0.0) {
        return Err(Error::invalid("inconsistent synthetic signal settings"));
    }
    let len = (cfg.duration / cfg.step).round() as usize + 1;
    let signal_times: Vec<f64> = (0..len).map(|i| i as f64 * cfg.step).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let channels: Vec<Vec<f64>> = (0..cfg.sensors)
        .map(|_| smooth_noise(&mut rng, len, cfg.step, cfg.smoothing, cfg.amplitude))
        .collect();
    let end = signal_times[len - 1];
    let start = cfg.window + 0.2;
    let n = cfg.observations;
    let times: Vec<f64> = (0..n).map(|i| start + (end - start) * i as f64 / (n - 1) as f64).collect();
    let (p1, p2): (f64, f64) = (rng.random_range(0.0..6.28), rng.random_range(0.0..6.28));
    let positions = times
        .iter()
        .map(|&t| (std::f64::consts::TAU * t / 4.0 + p1).sin() + 0.5 * (std::f64::consts::TAU * t / 2.3 + p2).sin())
        .collect();
    Dataset::new(signal_times, channels, times, positions, vec![0.0; n], cfg.window)
}

/// Separable kernel `γ(τ, z) = α(τ) b(z)` with `α` in the leading lag
/// functions of the multiscale basis and `b` in the position splines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthKernel {
    /// 1-based sensor label.
    pub sensor: usize,
    pub lag: Vec<f64>,
    pub position: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub p: usize,
    pub n: usize,
    pub q: usize,
    /// Common factor applied to every kernel.
    #[serde(default = "unit")]
    pub scale: f64,
    pub kernels: Vec<TruthKernel>,
}

fn unit() -> f64 {
    1.0
}

impl Truth {
    /// The shipped ground truth on sensors 7 and 12.
    pub fn fixture() -> Self {
        serde_json::from_str(TRUTH_FIXTURE).expect("truth fixture parses")
    }

    /// 0-based sensors carrying a kernel.
    pub fn sensors(&self) -> Vec<usize> {
        self.kernels.iter().map(|k| k.sensor - 1).collect()
    }

    /// Configuration whose bases represent the truth exactly, without
    /// truncation or sparsification.
    pub fn config(&self, window: f64) -> RunConfig {
        RunConfig {
            mode: Mode::Multiscale,
            p: self.p,
            n: self.n,
            m: None,
            q: self.q,
            keep_fraction: Some(1.0),
            window,
            condense: false,
            ..Default::default()
        }
    }

    pub fn validate(&self, n_sensors: usize) -> Result<()> {
        let dim_t = build_multiscale_basis(self.p, self.n)?.len();
        let dim_z = build_spline_basis(self.q)?.len();
        for k in &self.kernels {
            if k.sensor == 0 || k.sensor > n_sensors {
                return Err(Error::invalid(format!(
                    "truth sensor {} outside 1..={n_sensors}",
                    k.sensor
                )));
            }
            if k.lag.len() > dim_t || k.position.len() != dim_z {
                return Err(Error::mismatch(format!("truth kernel for sensor {} has wrong sizes", k.sensor)));
            }
        }
        Ok(())
    }

    /// Coefficient vector `vec(a bᵀ)` of one kernel in the truth's bases.
    pub fn beta(&self, kernel: &TruthKernel) -> Result<Vec<f64>> {
        let dim_t = build_multiscale_basis(self.p, self.n)?.len();
        let mut beta = vec![0.0; dim_t * kernel.position.len()];
        for (l, b) in kernel.position.iter().enumerate() {
            for (j, a) in kernel.lag.iter().enumerate() {
                beta[l * dim_t + j] = self.scale * a * b;
            }
        }
        Ok(beta)
    }

    /// Noise-free responses `Σ_k A_k β_k*` with untruncated blocks.
    pub fn clean_response(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        self.validate(dataset.n_sensors())?;
        let cfg = self.config(dataset.window());
        let bases = Bases::new(&cfg)?;
        let assembled = assemble_all(dataset, &bases, &cfg)?;
        let betas = self.kernels.iter().map(|k| self.beta(k)).collect::<Result<Vec<_>>>()?;
        predict_blocks(&assembled.blocks, &self.sensors(), &betas)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_consistent() {
        let t = Truth::fixture();
        assert_eq!(t.sensors(), vec![6, 11]);
        t.validate(16).unwrap();
        assert!(t.validate(10).is_err());
        let b = t.beta(&t.kernels[0]).unwrap();
        assert_eq!(b.len(), 160);
        // level-2 lag coefficients are zero
        assert!((0..10).all(|l| (8..16).all(|j| b[l * 16 + j] == 0.0)));
    }

    #[test]
    fn signals_are_standardized_and_seeded() {
        let cfg = SyntheticConfig {
            sensors: 2,
            observations: 20,
            duration: 3.0,
            ..Default::default()
        };
        let d = synthetic_dataset(&cfg).unwrap();
        let v = d.signal(0).values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let again = synthetic_dataset(&cfg).unwrap();
        assert_eq!(again.signal(1).values(), d.signal(1).values());
        assert_eq!(again.positions(), d.positions());
    }
}
