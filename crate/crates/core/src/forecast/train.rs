use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::Forecaster;
use super::{fit_scaling, ForecastConfig};
use crate::autograd::{student_t_nll, Graph, Mat};
use crate::nn::Adam;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    /// Context slices per optimizer step.
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// Tail fraction of each series held out for validation.
    pub val_fraction: f64,
    /// Fixed validation slices per series.
    pub val_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            patience: 5,
            batch_size: 8,
            steps_per_epoch: 16,
            learning_rate: 1e-3,
            val_fraction: 0.2,
            val_windows: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.val_windows == 0 {
            return Err(Error::Config("batch_size, steps_per_epoch and val_windows must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTrainReport {
    /// Mean training NLL per epoch.
    pub train_nll: Vec<f64>,
    /// Validation NLL per epoch.
    pub val_nll: Vec<f64>,
    pub initial_val_nll: f64,
    /// Epoch (0-based) whose weights were kept; `None` keeps the initial weights.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Scaled tokens and next-step targets for one slice of `context_len + 1` values.
fn slice_data(model: &Forecaster, slice: &[f64]) -> Result<(Mat, Mat)> {
    let ctx = &slice[..slice.len() - 1];
    let s = fit_scaling(ctx)?;
    let scaled: Vec<f64> = slice.iter().map(|&x| s.scale(x)).collect();
    let tokens = model.tokens(&scaled[..scaled.len() - 1])?;
    let start = model.lags.max_lag() + 1;
    let targets = Mat::from_shape_fn((tokens.nrows(), 1), |(r, _)| scaled[start + r]);
    Ok((tokens, targets))
}

fn slice_loss_and_grads(model: &Forecaster, slice: &[f64]) -> Result<(f64, Vec<Mat>)> {
    let (tokens, targets) = slice_data(model, slice)?;
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let tv = g.leaf(tokens);
    let (nu, mu, sigma) = model.forward_tape(&mut g, &p, tv);
    let nll = g.student_t_nll(nu, mu, sigma, targets);
    let loss = g.mean(nll);
    let value = g.scalar(loss);
    let grads = model.store.grads(&p, &g.backward(loss));
    Ok((value, grads))
}

fn slice_nll(model: &Forecaster, slice: &[f64]) -> Result<f64> {
    let ctx = &slice[..slice.len() - 1];
    let s = fit_scaling(ctx)?;
    let scaled: Vec<f64> = slice.iter().map(|&x| s.scale(x)).collect();
    let dists = model.position_dists(&scaled[..scaled.len() - 1])?;
    let start = model.lags.max_lag() + 1;
    let total: f64 = dists
        .iter()
        .enumerate()
        .map(|(r, d)| student_t_nll(d.nu, d.mu, d.sigma, scaled[start + r]))
        .sum();
    Ok(total / dists.len() as f64)
}

/// Training and validation slice ranges for one series of length `n`.
fn split(n: usize, slice_len: usize, cfg: &TrainConfig) -> (usize, Vec<usize>) {
    let n_val = ((n as f64 * cfg.val_fraction).ceil() as usize).max(slice_len);
    let (train_end, val_start) = if cfg.val_fraction > 0.0 && n >= n_val + slice_len {
        (n - n_val, n - n_val)
    } else {
        (n, 0)
    };
    let last = n - slice_len;
    let span = last - val_start;
    let k = cfg.val_windows;
    let starts = (0..k)
        .map(|i| if k == 1 { last } else { val_start + span * i / (k - 1) })
        .collect::<Vec<_>>();
    (train_end, starts)
}

/// Minimizes the Student-t NLL of next-step targets over random context slices,
/// keeping the weights with the best validation NLL.
pub fn train_forecaster(
    model: &mut Forecaster,
    series: &[Vec<f64>],
    cfg: &ForecastConfig,
    epochs: usize,
    patience: usize,
) -> Result<ForecastTrainReport> {
    cfg.validate()?;
    let tc = &cfg.train;
    let slice_len = cfg.context_len + 1;
    if series.is_empty() {
        return Err(Error::Argument("no training series".into()));
    }
    for s in series {
        if s.len() <= slice_len {
            return Err(Error::Length {
                len: s.len(),
                message: format!("each series must be longer than context_len + 1 = {slice_len}"),
            });
        }
    }
    let splits: Vec<(usize, Vec<usize>)> = series.iter().map(|s| split(s.len(), slice_len, tc)).collect();
    let val_slices: Vec<&[f64]> = series
        .iter()
        .zip(&splits)
        .flat_map(|(s, (_, starts))| starts.iter().map(move |&a| &s[a..a + slice_len]))
        .collect();
    let validate = |m: &Forecaster| -> Result<f64> {
        let v = val_slices
            .par_iter()
            .map(|s| slice_nll(m, s))
            .collect::<Result<Vec<f64>>>()?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    };

    let initial_val = validate(model)?;
    let mut report = ForecastTrainReport {
        train_nll: Vec::new(),
        val_nll: Vec::new(),
        initial_val_nll: initial_val,
        best_epoch: None,
        stopped_early: false,
    };
    if epochs == 0 {
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_F0CA);
    let mut opt = Adam::new(&model.store, tc.learning_rate);
    let mut best = (initial_val, model.store.clone());
    let mut since_best = 0;
    for epoch in 0..epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..tc.steps_per_epoch {
            let batch: Vec<&[f64]> = (0..tc.batch_size)
                .map(|_| {
                    let si = rng.random_range(0..series.len());
                    let train_end = splits[si].0;
                    let a = rng.random_range(0..=train_end - slice_len);
                    &series[si][a..a + slice_len]
                })
                .collect();
            let results = batch
                .par_iter()
                .map(|s| slice_loss_and_grads(model, s))
                .collect::<Result<Vec<_>>>()?;
            let mut grads: Vec<Mat> = results[0].1.iter().map(|g| Mat::zeros(g.dim())).collect();
            let mut loss = 0.0;
            for (l, gs) in &results {
                loss += l;
                for (acc, g) in grads.iter_mut().zip(gs) {
                    *acc += g;
                }
            }
            let k = results.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss in epoch {epoch}")));
            }
            grads.iter_mut().for_each(|g| *g /= k);
            opt.step(&mut model.store, &grads);
            epoch_loss += loss / k;
        }
        let val = validate(model)?;
        if !val.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss in epoch {epoch}")));
        }
        let train = epoch_loss / tc.steps_per_epoch as f64;
        log::info!("forecaster epoch {epoch}: train nll {train:.4}, val nll {val:.4}");
        report.train_nll.push(train);
        report.val_nll.push(val);
        if val < best.0 {
            best = (val, model.store.clone());
            report.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= patience {
                report.stopped_early = epoch + 1 < epochs;
                break;
            }
        }
    }
    model.store = best.1;
    Ok(report)
}
