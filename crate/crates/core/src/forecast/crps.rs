use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{quantile_sorted, ForecastDistribution};
use crate::{Error, Result};

/// `mean|X - y| - (1 / 2S^2) sum_ij |X_i - X_j|`, with the pair sum taken from
/// the sorted samples in `O(S log S)`.
pub fn crps_empirical(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Argument("CRPS needs at least one sample".into()));
    }
    let s = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let abs_err = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / s;
    // sum_ij |x_i - x_j| = 2 sum_i (2i - S + 1) x_(i)
    let spread: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - s + 1.0) * x)
        .sum();
    Ok((abs_err - spread / (s * s)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("box statistics need at least one value".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesCrps {
    pub name: String,
    /// Per-step CRPS averaged over the horizon.
    pub crps: f64,
    pub per_step: Vec<f64>,
    pub per_step_box: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrpsSummary {
    pub mean: f64,
    /// Population std over series.
    pub std: f64,
    pub per_series: Vec<SeriesCrps>,
    pub series_box: BoxStats,
}

pub fn evaluate_forecasts(dists: &[ForecastDistribution], truths: &[Vec<f64>]) -> Result<CrpsSummary> {
    if dists.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} forecasts but {} truth series",
            dists.len(),
            truths.len()
        )));
    }
    if dists.is_empty() {
        return Err(Error::Argument("nothing to evaluate".into()));
    }
    let mut per_series = Vec::with_capacity(dists.len());
    for (d, truth) in dists.iter().zip(truths) {
        if truth.len() != d.horizon() {
            return Err(Error::Dimension(format!(
                "{}: horizon {} but {} truth values",
                d.target_name,
                d.horizon(),
                truth.len()
            )));
        }
        let per_step = truth
            .iter()
            .enumerate()
            .map(|(t, &y)| crps_empirical(&d.samples.column(t).to_vec(), y))
            .collect::<Result<Vec<f64>>>()?;
        per_series.push(SeriesCrps {
            name: d.target_name.clone(),
            crps: per_step.iter().sum::<f64>() / per_step.len() as f64,
            per_step_box: BoxStats::from_values(&per_step)?,
            per_step,
        });
    }
    let scores: Vec<f64> = per_series.iter().map(|s| s.crps).collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(CrpsSummary {
        mean,
        std,
        series_box: BoxStats::from_values(&scores)?,
        per_series,
    })
}

/// Unconditional forecast: every step's samples are the `history` values.
pub fn climatological_forecast(history: &[f64], horizon: usize, name: &str) -> Result<ForecastDistribution> {
    if history.is_empty() || horizon == 0 {
        return Err(Error::Argument("climatology needs history and a positive horizon".into()));
    }
    Ok(ForecastDistribution {
        samples: Array2::from_shape_fn((history.len(), horizon), |(i, _)| history[i]),
        target_name: name.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise(samples: &[f64], y: f64) -> f64 {
        let s = samples.len() as f64;
        let a = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / s;
        let b: f64 = samples
            .iter()
            .flat_map(|x| samples.iter().map(move |z| (x - z).abs()))
            .sum();
        a - b / (2.0 * s * s)
    }

    #[test]
    fn enumerated_cases() {
        assert_eq!(crps_empirical(&[0.0, 2.0], 1.0).unwrap(), 0.5);
        assert_eq!(crps_empirical(&[3.0; 7], 3.0).unwrap(), 0.0);
        assert_eq!(crps_empirical(&[3.0; 4], 1.0).unwrap(), 2.0);
        assert!(crps_empirical(&[], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn matches_pairwise_definition(v in proptest::collection::vec(-5.0f64..5.0, 1..40), y in -6.0f64..6.0) {
            let fast = crps_empirical(&v, y).unwrap();
            prop_assert!((fast - pairwise(&v, y).max(0.0)).abs() < 1e-10);
            prop_assert!(fast >= 0.0);
        }

        #[test]
        fn scale_equivariant(v in proptest::collection::vec(-5.0f64..5.0, 1..40), y in -6.0f64..6.0, a in -4.0f64..4.0) {
            let scaled: Vec<f64> = v.iter().map(|x| a * x).collect();
            let lhs = crps_empirical(&scaled, a * y).unwrap();
            let rhs = a.abs() * crps_empirical(&v, y).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs));
        }
    }

    #[test]
    fn summary_arithmetic() {
        let perfect = ForecastDistribution {
            samples: Array2::from_elem((3, 2), 1.0),
            target_name: "a".into(),
        };
        let s = evaluate_forecasts(std::slice::from_ref(&perfect), &[vec![1.0, 1.0]]).unwrap();
        assert_eq!((s.mean, s.std), (0.0, 0.0));

        // point forecasts: CRPS reduces to absolute error
        let f = |v: f64, name: &str| ForecastDistribution {
            samples: Array2::from_elem((1, 1), v),
            target_name: name.into(),
        };
        let s = evaluate_forecasts(&[f(0.2, "a"), f(0.6, "b")], &[vec![0.0], vec![0.0]]).unwrap();
        assert!((s.mean - 0.4).abs() < 1e-15);
        assert!((s.std - 0.2).abs() < 1e-15);
        assert_eq!(s.series_box.min, 0.2);
        assert_eq!(s.series_box.max, 0.6);
        assert!(evaluate_forecasts(&[f(0.0, "a")], &[]).is_err());
        assert!(evaluate_forecasts(&[f(0.0, "a")], &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn climatology_repeats_history() {
        let d = climatological_forecast(&[1.0, 2.0, 3.0], 4, "c").unwrap();
        assert_eq!(d.samples.dim(), (3, 4));
        assert_eq!(d.samples.column(3).to_vec(), vec![1.0, 2.0, 3.0]);
    }
}
