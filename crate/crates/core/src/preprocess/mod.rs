//! Signal conditioning for raw sEMG channels.
//!
//! The default chain is baseline correction, wavelet packet denoising,
//! Butterworth filtering and max-abs normalization, applied per channel.

mod butterworth;
mod wavelet;

pub use butterworth::{butterworth_filter, Butterworth, FilterConfig, FilterKind, Sos};
pub use wavelet::{
    packet_decompose, packet_reconstruct, wpt_denoise, DenoiseConfig, ThresholdMode, DB4,
};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::ingest::RawRecord;
use crate::{Error, Result};

/// Mean removal.
pub fn baseline_correct(signal: &[f64]) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::Argument("cannot baseline-correct an empty signal".into()));
    }
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    Ok(signal.iter().map(|v| v - mean).collect())
}

/// Divide by the largest absolute value; all-zero input maps to all-zero output.
pub fn maxabs_normalize(signal: &[f64]) -> Vec<f64> {
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return vec![0.0; signal.len()];
    }
    signal.iter().map(|v| v / peak).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub baseline: bool,
    /// `None` skips the stage.
    pub denoise: Option<DenoiseConfig>,
    pub filter: Option<FilterConfig>,
    pub normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            baseline: true,
            denoise: Some(DenoiseConfig::default()),
            filter: Some(FilterConfig::default()),
            normalize: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = &self.denoise {
            d.validate()?;
        }
        if let Some(f) = &self.filter {
            f.validate()?;
        }
        Ok(())
    }
}

pub fn preprocess_channel(signal: &[f64], cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    let mut x = signal.to_vec();
    if cfg.baseline {
        x = baseline_correct(&x)?;
    }
    if let Some(d) = &cfg.denoise {
        x = wpt_denoise(&x, d)?;
    }
    if let Some(f) = &cfg.filter {
        x = butterworth_filter(&x, f)?;
    }
    if cfg.normalize {
        x = maxabs_normalize(&x);
    }
    Ok(x)
}

/// Run the chain over every sEMG channel of a record; joint data pass through untouched.
///
/// The filter's sample rate is taken from the record, overriding the config.
pub fn preprocess_record(record: &RawRecord, cfg: &PreprocessConfig) -> Result<RawRecord> {
    let mut cfg = cfg.clone();
    if let Some(f) = cfg.filter.as_mut() {
        f.sample_rate_hz = record.sample_rate_hz;
    }
    cfg.validate()?;
    let mut semg = Array2::zeros(record.semg.raw_dim());
    for (c, col) in record.semg.axis_iter(Axis(1)).enumerate() {
        let out = preprocess_channel(&col.to_vec(), &cfg)?;
        semg.column_mut(c).assign(&ndarray::Array1::from(out));
    }
    Ok(RawRecord {
        semg,
        ..record.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_examples() {
        assert_eq!(baseline_correct(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(baseline_correct(&[1.0, 2.0, 3.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert!(matches!(baseline_correct(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn baseline_mean_vanishes_on_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-50.0..80.0)).collect();
        let y = baseline_correct(&x).unwrap();
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(m.abs() < 1e-12 * peak);
    }

    #[test]
    fn maxabs_examples() {
        assert_eq!(maxabs_normalize(&[-2.0, 1.0]), vec![-1.0, 0.5]);
        assert_eq!(maxabs_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
        let y = maxabs_normalize(&[0.3, -7.1, 2.2]);
        assert_eq!(y.iter().fold(0.0f64, |m, v| m.max(v.abs())), 1.0);
    }

    #[test]
    fn full_chain_preserves_length_and_finiteness() {
        let rec = crate::ingest::synth_gait(4, 1, 1926.0).unwrap();
        let out = preprocess_record(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.semg.dim(), rec.semg.dim());
        assert!(out.semg.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        assert_eq!(out.angles, rec.angles);
    }
}
