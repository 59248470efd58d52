//! Sampled signals, historical windows and the regression dataset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::PiecewisePolynomial;

/// Continuous piecewise-linear interpolant of a sampled series.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SampledSignal {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::mismatch(format!(
                "{} sample times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::invalid("interpolation needs at least two samples"));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            let what = if times[i + 1] == times[i] { "duplicate" } else { "decreasing" };
            return Err(Error::invalid(format!(
                "{what} sample time {} at index {}",
                times[i + 1],
                i + 1
            )));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("samples must be finite"));
        }
        Ok(SampledSignal { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if t < lo || t > hi {
            return Err(Error::Domain { value: t, lo, hi });
        }
        Ok(self.eval_clamped(t))
    }

    fn eval_clamped(&self, t: f64) -> f64 {
        let n = self.times.len();
        let i = self.times.partition_point(|&s| s <= t).clamp(1, n - 1) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        v0 + (v1 - v0) * ((t - t0) / (t1 - t0))
    }

    /// The time-reversed, rescaled history `τ ↦ X(t - δτ)` on `[0, 1]`.
    pub fn window(&self, t: f64, delta: f64) -> Result<PiecewisePolynomial> {
        if !(delta > 0.0) {
            return Err(Error::invalid("window width must be positive"));
        }
        let (lo, hi) = self.domain();
        let slack = 1e-12 * (hi - lo).abs().max(1.0);
        let start = t - delta;
        if start < lo - slack || t > hi + slack {
            return Err(Error::invalid(format!(
                "window [{start}, {t}] leaves the signal domain [{lo}, {hi}]"
            )));
        }
        let t = t.min(hi);
        // sample times strictly inside the window become breakpoints in τ
        let first = self.times.partition_point(|&s| s <= start);
        let last = self.times.partition_point(|&s| s < t);
        let mut taus = vec![0.0];
        let mut vals = vec![self.eval_clamped(t)];
        for idx in (first..last).rev() {
            let tau = (t - self.times[idx]) / delta;
            if tau <= 1e-13 || tau >= 1.0 - 1e-13 {
                continue;
            }
            taus.push(tau);
            vals.push(self.values[idx]);
        }
        taus.push(1.0);
        vals.push(self.eval_clamped(start.max(lo)));
        let pieces = vals.windows(2).map(|v| vec![v[0], v[1] - v[0]]).collect();
        Ok(PiecewisePolynomial::from_parts(taus, pieces))
    }
}

/// Affine map from observed positions onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionMap {
    pub min: f64,
    pub max: f64,
}

impl PositionMap {
    pub fn fit(positions: &[f64]) -> Self {
        let min = positions.iter().copied().fold(f64::INFINITY, f64::min);
        let max = positions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        PositionMap { min, max }
    }

    /// Normalized position, clamped to `[0, 1]`. A degenerate range maps
    /// everything to the midpoint.
    pub fn apply(&self, z: f64) -> f64 {
        let span = self.max - self.min;
        if !(span > 0.0) {
            return 0.5;
        }
        ((z - self.min) / span).clamp(0.0, 1.0)
    }
}

/// Observations of the historical functional linear model: `K` signals on a
/// common time grid plus `N` (time, position, response) triples.
#[derive(Debug, Clone)]
pub struct Dataset {
    signals: Vec<SampledSignal>,
    times: Vec<f64>,
    positions: Vec<f64>,
    responses: Vec<f64>,
    window: f64,
}

impl Dataset {
    pub fn new(
        signal_times: Vec<f64>,
        channels: Vec<Vec<f64>>,
        times: Vec<f64>,
        positions: Vec<f64>,
        responses: Vec<f64>,
        window: f64,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("at least one signal channel is required"));
        }
        let signals = channels
            .into_iter()
            .map(|c| SampledSignal::new(signal_times.clone(), c))
            .collect::<Result<Vec<_>>>()?;
        if times.len() != positions.len() || times.len() != responses.len() {
            return Err(Error::mismatch(format!(
                "{} times, {} positions, {} responses",
                times.len(),
                positions.len(),
                responses.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::invalid("no observations"));
        }
        if !(window > 0.0) {
            return Err(Error::invalid("window width must be positive"));
        }
        if positions.iter().chain(&responses).chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        let (lo, hi) = signals[0].domain();
        let slack = 1e-12 * (hi - lo).abs().max(1.0);
        if let Some(i) = times
            .iter()
            .position(|&t| t - window < lo - slack || t > hi + slack)
        {
            return Err(Error::invalid(format!(
                "observation {i} at t = {} has a window outside [{lo}, {hi}]",
                times[i]
            )));
        }
        Ok(Dataset {
            signals,
            times,
            positions,
            responses,
            window,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.times.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.signals.len()
    }

    pub fn signal(&self, k: usize) -> &SampledSignal {
        &self.signals[k]
    }

    pub fn signal_times(&self) -> &[f64] {
        self.signals[0].times()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Same signals and design points with new responses.
    pub fn with_responses(&self, responses: Vec<f64>) -> Result<Self> {
        if responses.len() != self.n_obs() {
            return Err(Error::mismatch("response length differs from observation count"));
        }
        Ok(Dataset {
            responses,
            ..self.clone()
        })
    }

    /// Historical window of sensor `k` at observation `i`.
    pub fn history(&self, k: usize, i: usize) -> Result<PiecewisePolynomial> {
        self.signals[k].window(self.times[i], self.window)
    }
}
