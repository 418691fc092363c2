use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

use super::network::{DistHead, Forecaster, GenCache};
use super::{fit_scaling, ForecastConfig, ForecastDistribution};
use crate::{Error, Result};

fn check_context(context: &[f64], cfg: &ForecastConfig) -> Result<()> {
    if context.len() != cfg.context_len {
        return Err(Error::Dimension(format!(
            "context has {} values, config expects {}",
            context.len(),
            cfg.context_len
        )));
    }
    Ok(())
}

/// Student-t parameters for the value right after `context`, in scaled space.
pub fn forward_dist(model: &Forecaster, context: &[f64], cfg: &ForecastConfig) -> Result<DistHead> {
    check_context(context, cfg)?;
    let s = fit_scaling(context)?;
    let scaled: Vec<f64> = context.iter().map(|&x| s.scale(x)).collect();
    Ok(*model.position_dists(&scaled)?.last().expect("at least one token"))
}

fn draw(d: &DistHead, rng: &mut ChaCha8Rng, temperature: f64) -> Result<f64> {
    if temperature == 0.0 {
        return Ok(d.mu);
    }
    let t = StudentT::new(d.nu).map_err(|e| Error::Numeric(format!("invalid Student-t df {}: {e}", d.nu)))?;
    for _ in 0..2 {
        let v = d.mu + d.sigma * temperature * t.sample(rng);
        if v.is_finite() {
            return Ok(v);
        }
    }
    Err(Error::Numeric("sample path stayed non-finite after one redraw".into()))
}

/// Autoregressive sample paths, inverse-scaled with the context's scaling.
///
/// Path `p` draws from its own stream seeded with `cfg.seed + p`. New tokens
/// attend to a window as long as the context's token count.
pub fn sample_forecast(model: &Forecaster, context: &[f64], cfg: &ForecastConfig) -> Result<ForecastDistribution> {
    check_context(context, cfg)?;
    cfg.validate()?;
    let scaling = fit_scaling(context)?;
    let scaled: Vec<f64> = context.iter().map(|&x| scaling.scale(x)).collect();
    let tokens = model.tokens(&scaled)?;
    let (prefix, raw) = model.prefill(&tokens);
    let first = Forecaster::dists_from_raw(&raw.slice(ndarray::s![-1.., ..]).to_owned())[0];

    let (paths, horizon) = (cfg.num_samples, cfg.horizon);
    let max_lag = model.lags.max_lag();
    let mut rngs: Vec<ChaCha8Rng> = (0..paths)
        .map(|p| ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(p as u64)))
        .collect();
    let tail = scaled[scaled.len() - max_lag..].to_vec();
    let mut history = vec![tail; paths];
    let mut dists = vec![first; paths];
    let mut cache = GenCache::new(prefix, paths, horizon.saturating_sub(1).max(1));
    let mut samples = Array2::zeros((paths, horizon));
    for h in 0..horizon {
        for p in 0..paths {
            let y = draw(&dists[p], &mut rngs[p], cfg.temperature)?;
            samples[[p, h]] = y;
            history[p].push(y);
        }
        if h + 1 == horizon {
            break;
        }
        let mut step_tokens = Array2::zeros((paths, model.token_dim()));
        for (p, hist) in history.iter().enumerate() {
            let last = hist.len() - 1;
            step_tokens[[p, 0]] = hist[last];
            for (j, &l) in model.lags.lags().iter().enumerate() {
                step_tokens[[p, j + 1]] = hist[last - l];
            }
        }
        dists = Forecaster::dists_from_raw(&model.step(&mut cache, &step_tokens));
    }
    samples.mapv_inplace(|z| scaling.unscale(z));
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("forecast overflowed after inverse scaling".into()));
    }
    Ok(ForecastDistribution {
        samples,
        target_name: String::new(),
    })
}

impl ForecastDistribution {
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.target_name = name.into();
        self
    }

    /// Mean over paths at each step.
    pub fn mean_path(&self) -> Vec<f64> {
        self.samples.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
    }
}
