//! Record-to-tensor driver: correct, denoise, filter, normalize, featurize, standardize.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::StageContext;
use crate::features::{featurize, FeatureTensor, FitScope, Standardizer, TargetTensor, WindowSpec};
use crate::ingest::RawRecord;
use crate::preprocess::{preprocess_record, PreprocessConfig};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub window: WindowSpec,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate().stage("preprocess")?;
        self.window.validate().stage("featurize")
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Standardized features.
    pub features: FeatureTensor,
    /// Raw joint targets, in physical units.
    pub targets: TargetTensor,
    pub standardizer: Standardizer,
}

/// Preprocess and featurize one record, then z-score its features.
pub fn run_pipeline(record: &RawRecord, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    record.validate().stage("ingest")?;
    let cleaned = preprocess_record(record, &cfg.preprocess).stage("preprocess")?;
    let (raw, targets) = featurize(&cleaned, &cfg.window).stage("featurize")?;
    let standardizer = Standardizer::fit(&raw.data, FitScope::PerRecord).stage("standardize")?;
    let features = FeatureTensor {
        data: standardizer.apply(&raw.data).stage("standardize")?,
    };
    Ok(PipelineOutput {
        features,
        targets,
        standardizer,
    })
}

/// Per-column mean and population std of a `[N x D]` matrix; zero-variance columns get std 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnScaler {
    pub fn fit(m: &Array2<f64>) -> Self {
        let mean: Vec<f64> = m.mean_axis(Axis(0)).map(|v| v.to_vec()).unwrap_or_default();
        let std = m
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|&s| if s > 0.0 { s } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = m.clone();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    pub fn inverse(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = m.clone();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        out
    }
}
