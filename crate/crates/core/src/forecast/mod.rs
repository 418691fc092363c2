//! Probabilistic univariate forecaster built on lag-feature tokens.
//!
//! Each token holds the current scaled value and its lagged values. A small
//! decoder-only causal self-attention network maps tokens to Student-t
//! parameters for the next value; forecasts are sampled autoregressively.

mod crps;
mod network;
mod sample;
mod train;

pub use crps::{
    climatological_forecast, crps_empirical, evaluate_forecasts, BoxStats, CrpsSummary, SeriesCrps,
};
pub use network::{ArchConfig, DistHead, Forecaster};
pub use sample::{forward_dist, sample_forecast};
pub use train::{train_forecaster, ForecastTrainReport, TrainConfig};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ingest::UnivariateSeries;
use crate::{Error, Result};

/// Sorted, distinct, positive lag offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct LagSet(Vec<usize>);

impl LagSet {
    pub fn new(mut lags: Vec<usize>) -> Result<Self> {
        lags.sort_unstable();
        lags.dedup();
        if lags.is_empty() || lags[0] == 0 {
            return Err(Error::Config("lags must be a nonempty set of positive integers".into()));
        }
        Ok(Self(lags))
    }

    /// Lags `1..=n`.
    pub fn dense(n: usize) -> Result<Self> {
        Self::new((1..=n).collect())
    }

    pub fn lags(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_lag(&self) -> usize {
        *self.0.last().expect("nonempty by construction")
    }
}

impl Default for LagSet {
    fn default() -> Self {
        Self::dense(64).expect("valid")
    }
}

impl<'de> Deserialize<'de> for LagSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        LagSet::new(v).map_err(serde::de::Error::custom)
    }
}

/// `[x[t - l] for l in lags]`.
pub fn build_lag_features(series: &UnivariateSeries, t: usize, lags: &LagSet) -> Result<Vec<f64>> {
    lag_values(&series.values, t, lags)
}

pub(crate) fn lag_values(values: &[f64], t: usize, lags: &LagSet) -> Result<Vec<f64>> {
    let required = lags.max_lag();
    if t < required || t >= values.len() {
        return Err(Error::History { t, required });
    }
    Ok(lags.lags().iter().map(|&l| values[t - l]).collect())
}

pub const STD_FLOOR: f64 = 1e-8;

/// Zero-mean, unit-variance scaling of a context window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub std: f64,
}

impl Scaling {
    pub fn scale(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn unscale(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Returns `(scaled, mean, std)` using the population std floored at [`STD_FLOOR`].
pub fn scale_context(context: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let s = fit_scaling(context)?;
    Ok((context.iter().map(|&x| s.scale(x)).collect(), s.mean, s.std))
}

pub fn fit_scaling(context: &[f64]) -> Result<Scaling> {
    if context.len() < 2 {
        return Err(Error::Length {
            len: context.len(),
            message: "context scaling needs at least 2 values".into(),
        });
    }
    if context.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("context contains non-finite values".into()));
    }
    let n = context.len() as f64;
    let mean = context.iter().sum::<f64>() / n;
    let var = context.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(Scaling {
        mean,
        std: var.sqrt().max(STD_FLOOR),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub context_len: usize,
    pub num_samples: usize,
    pub seed: u64,
    /// Multiplies the predictive scale when sampling; 0 gives deterministic paths.
    pub temperature: f64,
    pub lags: LagSet,
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizon: 128,
            context_len: 256,
            num_samples: 100,
            seed: 0,
            temperature: 1.0,
            lags: LagSet::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.num_samples == 0 {
            return Err(Error::Config("horizon and num_samples must be positive".into()));
        }
        if self.context_len <= self.lags.max_lag() {
            return Err(Error::Config(format!(
                "context_len {} must exceed the largest lag {}",
                self.context_len,
                self.lags.max_lag()
            )));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be finite and non-negative".into()));
        }
        self.arch.validate()?;
        self.train.validate()
    }
}

/// Sample paths `[num_samples x horizon]` for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDistribution {
    pub samples: Array2<f64>,
    pub target_name: String,
}

impl ForecastDistribution {
    pub fn horizon(&self) -> usize {
        self.samples.ncols()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.nrows()
    }

    /// Linear-interpolation quantile of the samples at step `t`.
    pub fn quantile(&self, q: f64, t: usize) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Argument(format!("quantile level {q} outside [0, 1]")));
        }
        if t >= self.horizon() {
            return Err(Error::Range {
                index: t,
                bound: self.horizon(),
            });
        }
        let mut col: Vec<f64> = self.samples.column(t).to_vec();
        col.sort_by(f64::total_cmp);
        Ok(quantile_sorted(&col, q))
    }

    pub fn mean(&self, t: usize) -> f64 {
        self.samples.column(t).mean().unwrap_or(f64::NAN)
    }

    /// Population std of the samples at step `t`.
    pub fn std(&self, t: usize) -> f64 {
        self.samples.column(t).std(0.0)
    }
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
