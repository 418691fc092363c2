//! Overlapping windows, the six per-channel window features, and standardization.
//!
//! Feature order is fixed everywhere (tensors, serialization, CLI):
//! integral (IEMG), variance, wavelength, zero-crossing rate, lag-1
//! autocorrelation, weighted average (mean) frequency.

use ndarray::{Array2, Array3, Axis};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::ingest::{RawRecord, NUM_JOINTS, SEMG_CHANNELS};
use crate::{Error, Result};

pub const NUM_FEATURES: usize = 6;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "integral",
    "variance",
    "wavelength",
    "zero_crossing_rate",
    "correlation_coefficient",
    "weighted_avg_frequency",
];
pub const QUANTITY_NAMES: [&str; 2] = ["angle", "torque"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub window_len: usize,
    pub overlap: usize,
    /// Minimum jump between consecutive samples for a sign change to count.
    pub zc_threshold: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window_len: 100,
            overlap: 50,
            zc_threshold: 0.0,
        }
    }
}

impl WindowSpec {
    pub fn new(window_len: usize, overlap: usize) -> Result<Self> {
        let spec = Self {
            window_len,
            overlap,
            zc_threshold: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.overlap >= self.window_len {
            return Err(Error::Config(format!(
                "window spec needs 0 <= overlap < window_len, got overlap {} window {}",
                self.overlap, self.window_len
            )));
        }
        if !(self.zc_threshold.is_finite() && self.zc_threshold >= 0.0) {
            return Err(Error::Config("zero-crossing threshold must be >= 0".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.window_len - self.overlap
    }

    /// `floor((len - L) / s) + 1`, or 0 when the signal is shorter than a window.
    pub fn window_count(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.stride() + 1
        }
    }
}

pub fn segment<'a>(signal: &'a [f64], spec: &WindowSpec) -> Vec<&'a [f64]> {
    let stride = spec.stride();
    (0..spec.window_count(signal.len()))
        .map(|i| &signal[i * stride..i * stride + spec.window_len])
        .collect()
}

pub fn feature_vector(window: &[f64], sample_rate_hz: f64) -> Result<[f64; NUM_FEATURES]> {
    feature_vector_with_threshold(window, sample_rate_hz, 0.0)
}

pub fn feature_vector_with_threshold(
    window: &[f64],
    sample_rate_hz: f64,
    zc_threshold: f64,
) -> Result<[f64; NUM_FEATURES]> {
    let n = window.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "feature window needs at least 2 samples, got {n}"
        )));
    }
    let nf = n as f64;
    let integral: f64 = window.iter().map(|v| v.abs()).sum();
    let mean = window.iter().sum::<f64>() / nf;
    let variance = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let wavelength: f64 = window.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
    let crossings = window
        .windows(2)
        .filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0) && (p[1] - p[0]).abs() >= zc_threshold)
        .count();
    let zcr = crossings as f64 / (nf - 1.0);
    Ok([
        integral,
        variance,
        wavelength,
        zcr,
        lag1_autocorrelation(window),
        mean_frequency(window, sample_rate_hz),
    ])
}

/// Pearson correlation of `x[..n-1]` with `x[1..]`; 0 when either side is constant.
fn lag1_autocorrelation(x: &[f64]) -> f64 {
    let a = &x[..x.len() - 1];
    let b = &x[1..];
    let m = a.len() as f64;
    let ma = a.iter().sum::<f64>() / m;
    let mb = b.iter().sum::<f64>() / m;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (u, v) in a.iter().zip(b) {
        sab += (u - ma) * (v - mb);
        saa += (u - ma).powi(2);
        sbb += (v - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Power-weighted mean frequency of the one-sided periodogram of the mean-removed window.
fn mean_frequency(x: &[f64], sample_rate_hz: f64) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
        let doubled = k != 0 && !(n % 2 == 0 && k == n / 2);
        let p = c.norm_sqr() * if doubled { 2.0 } else { 1.0 };
        num += k as f64 * sample_rate_hz / n as f64 * p;
        den += p;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `[W x 9 x 6]` window features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub data: Array3<f64>,
}

/// `[W x 8 x 2]` joint targets; last axis is (angle deg, torque Nm).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTensor {
    pub data: Array3<f64>,
}

impl FeatureTensor {
    pub fn windows(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    /// `[W x 54]`, channel-major (`c * 6 + f`).
    pub fn to_matrix(&self) -> Array2<f64> {
        let w = self.windows();
        let cols = self.data.len() / w.max(1);
        self.data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((w, cols))
            .expect("contiguous tensor")
    }
}

pub const NUM_OUTPUTS: usize = 2 * NUM_JOINTS;

/// Name of flattened output column `o` (angles first, then torques).
pub fn output_name(o: usize) -> String {
    crate::ingest::series_name(
        o % NUM_JOINTS,
        if o < NUM_JOINTS {
            crate::ingest::Quantity::Angle
        } else {
            crate::ingest::Quantity::Torque
        },
    )
}

impl TargetTensor {
    pub fn windows(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    /// `[W x 16]` with column `q * 8 + j`: the eight angles, then the eight torques.
    pub fn to_matrix(&self) -> Array2<f64> {
        let w = self.windows();
        Array2::from_shape_fn((w, NUM_OUTPUTS), |(i, o)| {
            self.data[[i, o % NUM_JOINTS, o / NUM_JOINTS]]
        })
    }
}

pub fn featurize(record: &RawRecord, spec: &WindowSpec) -> Result<(FeatureTensor, TargetTensor)> {
    spec.validate()?;
    record.validate()?;
    let t = record.semg_len();
    let tj = record.joint_len();
    let w = spec.window_count(t);
    if w == 0 || tj == 0 {
        return Err(Error::Length {
            len: t,
            message: format!(
                "featurize needs at least one {}-sample window and joint data ({tj} joint rows)",
                spec.window_len
            ),
        });
    }
    let mut features = Array3::zeros((w, SEMG_CHANNELS, NUM_FEATURES));
    for c in 0..SEMG_CHANNELS {
        let channel = record.semg.column(c).to_vec();
        for (i, win) in segment(&channel, spec).into_iter().enumerate() {
            let fv = feature_vector_with_threshold(win, record.sample_rate_hz, spec.zc_threshold)?;
            for (f, v) in fv.into_iter().enumerate() {
                features[[i, c, f]] = v;
            }
        }
    }
    let mut targets = Array3::zeros((w, NUM_JOINTS, 2));
    let stride = spec.stride();
    for i in 0..w {
        let idx = target_index(i * stride + spec.window_len - 1, t, tj);
        for j in 0..NUM_JOINTS {
            targets[[i, j, 0]] = record.angles[[idx, j]];
            targets[[i, j, 1]] = record.torques[[idx, j]];
        }
    }
    Ok((FeatureTensor { data: features }, TargetTensor { data: targets }))
}

/// Nearest joint-timeline index for sEMG sample `end` (window's last sample).
pub fn target_index(end: usize, semg_len: usize, joint_len: usize) -> usize {
    let scaled = (end as f64 * joint_len as f64 / semg_len as f64).round() as usize;
    scaled.min(joint_len - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitScope {
    PerRecord,
    Corpus,
}

/// Per-(axis1, axis2) z-scoring of a `[W x A x B]` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
    /// Columns with zero variance; these pass through unchanged.
    pub zero_variance: Array2<bool>,
    pub scope: FitScope,
}

impl Standardizer {
    pub fn fit(data: &Array3<f64>, scope: FitScope) -> Result<Self> {
        let w = data.len_of(Axis(0));
        if w < 2 {
            return Err(Error::Argument(format!(
                "standardizer fit needs at least 2 windows, got {w}"
            )));
        }
        let (_, a, b) = data.dim();
        let mut mean = Array2::zeros((a, b));
        let mut std = Array2::ones((a, b));
        let mut zero_variance = Array2::from_elem((a, b), false);
        for i in 0..a {
            for j in 0..b {
                let col = data.slice(ndarray::s![.., i, j]);
                let m = col.sum() / w as f64;
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / w as f64;
                if var > 0.0 {
                    mean[[i, j]] = m;
                    std[[i, j]] = var.sqrt();
                } else {
                    log::warn!("zero-variance column ({i}, {j}) left unscaled");
                    zero_variance[[i, j]] = true;
                }
            }
        }
        Ok(Self {
            mean,
            std,
            zero_variance,
            scope,
        })
    }

    fn check(&self, data: &Array3<f64>) -> Result<()> {
        let (_, a, b) = data.dim();
        if (a, b) != self.mean.dim() {
            return Err(Error::Dimension(format!(
                "standardizer fitted on {:?} columns, got ({a}, {b})",
                self.mean.dim()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, data: &Array3<f64>) -> Result<Array3<f64>> {
        self.check(data)?;
        let mut out = data.clone();
        for mut row in out.outer_iter_mut() {
            row -= &self.mean;
            row /= &self.std;
        }
        Ok(out)
    }

    pub fn inverse(&self, data: &Array3<f64>) -> Result<Array3<f64>> {
        self.check(data)?;
        let mut out = data.clone();
        for mut row in out.outer_iter_mut() {
            row *= &self.std;
            row += &self.mean;
        }
        Ok(out)
    }

    pub fn has_zero_variance(&self) -> bool {
        self.zero_variance.iter().any(|&z| z)
    }
}

pub fn fit_standardizer(features: &FeatureTensor) -> Result<Standardizer> {
    Standardizer::fit(&features.data, FitScope::PerRecord)
}

pub fn apply_standardizer(s: &Standardizer, features: &FeatureTensor) -> Result<FeatureTensor> {
    Ok(FeatureTensor {
        data: s.apply(&features.data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_examples() {
        let spec = WindowSpec::default();
        let x: Vec<f64> = (0..150).map(f64::from).collect();
        assert_eq!(segment(&x[..100], &spec).len(), 1);
        let w = segment(&x, &spec);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0][0], 0.0);
        assert_eq!(w[1][0], 50.0);
        assert!(segment(&x[..99], &spec).is_empty());
    }

    #[test]
    fn window_spec_validation() {
        assert!(WindowSpec::new(100, 100).is_err());
        assert!(WindowSpec::new(0, 0).is_err());
        assert_eq!(WindowSpec::new(10, 9).unwrap().stride(), 1);
    }

    #[test]
    fn constant_window_conventions() {
        let f = feature_vector(&[-2.5; 100], 1926.0).unwrap();
        assert_eq!(f, [250.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn alternating_window_is_analytic() {
        let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let f = feature_vector(&x, 1926.0).unwrap();
        assert_eq!(f[0], 100.0);
        assert!((f[1] - 1.0).abs() < 1e-12);
        assert_eq!(f[2], 198.0);
        assert_eq!(f[3], 1.0);
        assert!((f[4] + 1.0).abs() < 1e-12);
        assert!((f[5] - 963.0).abs() < 1e-9);
    }

    #[test]
    fn zero_counts_as_positive() {
        let f = feature_vector(&[0.0, -1.0, 0.0, 1.0, 0.0], 100.0).unwrap();
        assert_eq!(f[3], 2.0 / 4.0);
    }

    #[test]
    fn hysteresis_threshold_suppresses_small_crossings() {
        let x = [0.01, -0.01, 0.01, -2.0];
        let f = feature_vector_with_threshold(&x, 100.0, 0.5).unwrap();
        assert_eq!(f[3], 1.0 / 3.0);
    }

    #[test]
    fn short_window_rejected() {
        assert!(matches!(feature_vector(&[1.0], 100.0), Err(Error::Argument(_))));
    }

    #[test]
    fn standardizer_two_point_column() {
        let data = Array3::from_shape_vec((2, 1, 1), vec![1.0, 3.0]).unwrap();
        let s = Standardizer::fit(&data, FitScope::PerRecord).unwrap();
        let z = s.apply(&data).unwrap();
        assert_eq!(z.iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0]);
        assert!(Standardizer::fit(&Array3::zeros((1, 2, 2)), FitScope::Corpus).is_err());
    }

    #[test]
    fn zero_variance_column_is_flagged_and_untouched() {
        let data = Array3::from_shape_vec((3, 1, 2), vec![5.0, 1.0, 5.0, 2.0, 5.0, 4.0]).unwrap();
        let s = Standardizer::fit(&data, FitScope::PerRecord).unwrap();
        assert!(s.zero_variance[[0, 0]] && !s.zero_variance[[0, 1]]);
        let z = s.apply(&data).unwrap();
        assert_eq!(z[[1, 0, 0]], 5.0);
    }

    #[test]
    fn target_index_scales_between_timelines() {
        assert_eq!(target_index(99, 1000, 1000), 99);
        assert_eq!(target_index(99, 1000, 500), 50);
        assert_eq!(target_index(999, 1000, 10), 9);
    }

    #[test]
    fn matrices_are_ordered() {
        let mut t = Array3::zeros((1, 8, 2));
        t[[0, 3, 1]] = 7.0;
        t[[0, 2, 0]] = 4.0;
        let m = TargetTensor { data: t }.to_matrix();
        assert_eq!(m[[0, 11]], 7.0);
        assert_eq!(m[[0, 2]], 4.0);
        assert_eq!(output_name(11), "left_ankle_flexion_torque");
        let mut f = Array3::zeros((1, 9, 6));
        f[[0, 2, 4]] = 1.0;
        assert_eq!(FeatureTensor { data: f }.to_matrix()[[0, 16]], 1.0);
    }
}
