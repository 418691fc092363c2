use std::path::Path;

use gaitcast_core::forecast::ForecastConfig;
use gaitcast_core::gpr::Hyperparams;
use gaitcast_core::ingest::{GaitLabel, CANONICAL_SAMPLE_RATE_HZ};
use gaitcast_core::pipeline::PipelineConfig;
use gaitcast_core::xlstm::XlstmConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub cycles: usize,
    pub label: GaitLabel,
    pub sample_rate_hz: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            cycles: 20,
            label: GaitLabel::DNS,
            sample_rate_hz: CANONICAL_SAMPLE_RATE_HZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GprRunConfig {
    pub hyperparams: Hyperparams,
    /// Training rows kept after an evenly spaced subsample.
    pub max_train_rows: usize,
    /// Rows used for the marginal-likelihood search; the final fit uses all kept rows.
    pub optimize_rows: usize,
}

impl Default for GprRunConfig {
    fn default() -> Self {
        Self {
            hyperparams: Hyperparams::Optimize { noise_variance: 1e-6 },
            max_train_rows: 2000,
            optimize_rows: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSet {
    Angles,
    Torques,
    All,
}

impl TargetSet {
    /// Flattened output columns (angles `0..8`, torques `8..16`).
    pub fn columns(self) -> std::ops::Range<usize> {
        match self {
            TargetSet::Angles => 0..8,
            TargetSet::Torques => 8..16,
            TargetSet::All => 0..16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastRunConfig {
    pub model: ForecastConfig,
    pub targets: TargetSet,
    /// Epochs on the pretraining corpus, when one is given.
    pub pretrain_epochs: usize,
}

impl Default for ForecastRunConfig {
    fn default() -> Self {
        Self {
            model: ForecastConfig::default(),
            targets: TargetSet::Angles,
            pretrain_epochs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Fraction of windows, from the front, used for training.
    pub split: f64,
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
    pub gpr: GprRunConfig,
    pub xlstm: XlstmConfig,
    pub forecast: ForecastRunConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split: 0.8,
            synth: SynthConfig::default(),
            pipeline: PipelineConfig::default(),
            gpr: GprRunConfig::default(),
            xlstm: XlstmConfig::default(),
            forecast: ForecastRunConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the `config` section of a provenance file; the
    /// rest of a provenance document is returned alongside.
    pub fn load(path: &Path) -> CliResult<(Self, Option<serde_json::Value>)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let (config, command) = match value {
            serde_json::Value::Object(mut m) if m.contains_key("command") && m.contains_key("config") => {
                let config = m.remove("config").unwrap_or_default();
                (config, Some(serde_json::Value::Object(m)))
            }
            other => (other, None),
        };
        let cfg: RunConfig =
            serde_json::from_value(config).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok((cfg, command))
    }

    /// Seeds every module from the top-level seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.xlstm.seed = seed;
        self.forecast.model.seed = seed;
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        let stage = |s: &'static str| move |e| CliError::Stage(s, e);
        if self.synth.cycles == 0 {
            return Err(CliError::Usage("synth.cycles must be >= 1".into()));
        }
        if !(self.synth.sample_rate_hz.is_finite() && self.synth.sample_rate_hz > 0.0) {
            return Err(CliError::Config("synth.sample_rate_hz must be positive".into()));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(CliError::Config(format!("split must lie in (0, 1), got {}", self.split)));
        }
        self.pipeline.validate().map_err(stage("pipeline"))?;
        if self.gpr.max_train_rows < 2 || self.gpr.optimize_rows < 2 {
            return Err(CliError::Config("gpr row caps must be at least 2".into()));
        }
        if let Hyperparams::Fixed(p) = self.gpr.hyperparams {
            gaitcast_core::gpr::KernelParams::new(p.signal_variance, p.length_scale, p.noise_variance)
                .map_err(stage("gpr"))?;
        }
        self.xlstm.validate().map_err(stage("xlstm"))?;
        self.forecast.model.validate().map_err(stage("forecast"))?;
        Ok(())
    }
}
