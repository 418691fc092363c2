use std::path::{Path, PathBuf};

use gaitcast_core::features::{output_name, FeatureTensor, TargetTensor, NUM_OUTPUTS};
use gaitcast_core::forecast::{
    climatological_forecast, evaluate_forecasts, sample_forecast, train_forecaster, CrpsSummary, ForecastDistribution,
    ForecastTrainReport, Forecaster,
};
use gaitcast_core::gpr::{self, ErrorMetrics, Hyperparams, KernelParams};
use gaitcast_core::ingest::{parse_record, synth_gait_labeled, write_record};
use gaitcast_core::pipeline::{run_pipeline, ColumnScaler};
use gaitcast_core::tensor_io::{
    features_to_csv, load_features, load_targets, load_tensor, save_tensor, targets_to_csv,
};
use gaitcast_core::xlstm::{rmse_loss, train, chunk_sequences, XlstmModel};
use ndarray::{s, Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Stage};
use crate::output::{write_json, write_text, Cell, Csv};

pub const TRIAL: &str = "trial.csv";
const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

pub fn synth(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let s = &cfg.synth;
    let rec = synth_gait_labeled(s.label, cfg.seed, s.cycles, s.sample_rate_hz).stage("synth")?;
    write_record(&rec, &out.join(TRIAL)).stage("synth")?;
    log::info!("wrote {} samples to {}", rec.semg_len(), out.join(TRIAL).display());
    Ok(())
}

pub fn pipeline(cfg: &RunConfig, input: &Path, out: &Path) -> CliResult<()> {
    let rec = parse_record(input).stage("ingest")?;
    let res = run_pipeline(&rec, &cfg.pipeline).stage("pipeline")?;
    save_tensor(&out.join("features.bin"), res.features.data.view().into_dyn()).stage("write tensors")?;
    save_tensor(&out.join("targets.bin"), res.targets.data.view().into_dyn()).stage("write tensors")?;
    write_text(&out.join("features.csv"), &features_to_csv(&res.features))?;
    write_text(&out.join("targets.csv"), &targets_to_csv(&res.targets))?;
    write_json(&out.join("standardizer.json"), &res.standardizer)?;
    write_json(&out.join("record.json"), &rec.meta())?;
    log::info!("{} windows", res.features.windows());
    Ok(())
}

fn load_pair(dir: &Path) -> CliResult<(FeatureTensor, TargetTensor)> {
    let f = load_features(&dir.join("features.bin")).stage("load tensors")?;
    let t = load_targets(&dir.join("targets.bin")).stage("load tensors")?;
    if f.windows() != t.windows() {
        return Err(CliError::Stage(
            "load tensors",
            gaitcast_core::Error::Dimension(format!("{} feature windows vs {} target windows", f.windows(), t.windows())),
        ));
    }
    Ok((f, t))
}

/// Train and test matrices: a contiguous split, or all of `dir` against all of `eval_dir`.
struct Split {
    x_train: Array2<f64>,
    y_train: Array2<f64>,
    x_test: Array2<f64>,
    y_test: Array2<f64>,
    cross: bool,
}

fn split(cfg: &RunConfig, dir: &Path, eval_dir: Option<&Path>) -> CliResult<Split> {
    let (f, t) = load_pair(dir)?;
    let (x, y) = (f.to_matrix(), t.to_matrix());
    if let Some(e) = eval_dir {
        let (fe, te) = load_pair(e)?;
        return Ok(Split {
            x_train: x,
            y_train: y,
            x_test: fe.to_matrix(),
            y_test: te.to_matrix(),
            cross: true,
        });
    }
    let n = x.nrows();
    let n_train = (n as f64 * cfg.split).floor() as usize;
    if n_train < 2 || n_train >= n {
        return Err(CliError::Stage(
            "split",
            gaitcast_core::Error::Length {
                len: n,
                message: format!("split {} leaves no train or test windows", cfg.split),
            },
        ));
    }
    Ok(Split {
        x_train: x.slice(s![..n_train, ..]).to_owned(),
        y_train: y.slice(s![..n_train, ..]).to_owned(),
        x_test: x.slice(s![n_train.., ..]).to_owned(),
        y_test: y.slice(s![n_train.., ..]).to_owned(),
        cross: false,
    })
}

/// `k` evenly spaced indices out of `n` (all of them when `k >= n`).
fn spaced(n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OutputMetrics {
    pub name: String,
    pub train: ErrorMetrics,
    pub test: ErrorMetrics,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupMean {
    angles: ErrorMetrics,
    torques: ErrorMetrics,
}

fn group_mean(outputs: &[OutputMetrics]) -> GroupMean {
    let mean = |r: std::ops::Range<usize>| {
        let k = r.len() as f64;
        ErrorMetrics {
            mae: outputs[r.clone()].iter().map(|o| o.test.mae).sum::<f64>() / k,
            rmse: outputs[r].iter().map(|o| o.test.rmse).sum::<f64>() / k,
        }
    };
    GroupMean {
        angles: mean(0..8),
        torques: mean(8..16),
    }
}

fn prediction_rows(csv: &mut Csv, name: &str, split: &str, truth: &[f64], pred: &[f64], std: Option<&[f64]>) {
    for (w, (t, p)) in truth.iter().zip(pred).enumerate() {
        let sd = std.map(|s| s[w]).unwrap_or(f64::NAN);
        csv.row(&[Cell::S(name), Cell::S(split), Cell::U(w), Cell::F(*t), Cell::F(*p), Cell::F(sd)]);
    }
}

const PRED_HEADER: [&str; 6] = ["output", "split", "window", "truth", "prediction", "std"];

#[derive(Debug, Serialize)]
struct GprMetrics {
    model: &'static str,
    cross_record: bool,
    train_rows: usize,
    train_rows_available: usize,
    train_rows_cap: usize,
    test_rows: usize,
    outputs: Vec<OutputMetrics>,
    kernels: Vec<KernelParams>,
    mean_test: GroupMean,
}

pub fn gpr(cfg: &RunConfig, dir: &Path, eval_dir: Option<&Path>, out: &Path) -> CliResult<()> {
    let sp = split(cfg, dir, eval_dir)?;
    let keep = spaced(sp.x_train.nrows(), cfg.gpr.max_train_rows);
    if keep.len() < sp.x_train.nrows() {
        log::warn!("gpr: training rows capped at {} of {}", keep.len(), sp.x_train.nrows());
    }
    let x = sp.x_train.select(Axis(0), &keep);
    let y = sp.y_train.select(Axis(0), &keep);
    let scaler = ColumnScaler::fit(&y);
    let ys = scaler.apply(&y);
    let opt_rows = spaced(x.nrows(), cfg.gpr.optimize_rows);
    let x_opt = x.select(Axis(0), &opt_rows);

    let fitted = (0..NUM_OUTPUTS)
        .into_par_iter()
        .map(|o| -> gaitcast_core::Result<_> {
            let yo = ys.column(o);
            let params = match cfg.gpr.hyperparams {
                Hyperparams::Fixed(p) => p,
                Hyperparams::Optimize { noise_variance } => {
                    let y_opt = yo.select(Axis(0), &opt_rows);
                    gpr::optimize_hyperparams(x_opt.view(), y_opt.view(), noise_variance)?
                }
            };
            let model = gpr::fit(x.view(), yo, Hyperparams::Fixed(params))?;
            let train = model.predict(sp.x_train.view())?;
            let test = model.predict(sp.x_test.view())?;
            Ok((model, train, test))
        })
        .collect::<gaitcast_core::Result<Vec<_>>>()
        .stage("gpr")?;

    let models_dir = out.join("gpr_models");
    crate::output::ensure_dir(&models_dir)?;
    let mut csv = Csv::new(&PRED_HEADER);
    let mut outputs = Vec::new();
    let mut kernels = Vec::new();
    for (o, (model, train, test)) in fitted.iter().enumerate() {
        let name = output_name(o);
        let unscale = |m: &[f64]| m.iter().map(|v| v * scaler.std[o] + scaler.mean[o]).collect::<Vec<_>>();
        let unstd = |v: &[f64]| v.iter().map(|v| v.sqrt() * scaler.std[o]).collect::<Vec<_>>();
        let (ptr, pte) = (unscale(&train.mean), unscale(&test.mean));
        let (ytr, yte) = (sp.y_train.column(o).to_vec(), sp.y_test.column(o).to_vec());
        outputs.push(OutputMetrics {
            name: name.clone(),
            train: gpr::evaluate(&ytr, &ptr).stage("gpr")?,
            test: gpr::evaluate(&yte, &pte).stage("gpr")?,
        });
        kernels.push(model.params);
        prediction_rows(&mut csv, &name, "train", &ytr, &ptr, Some(&unstd(&train.variance)));
        prediction_rows(&mut csv, &name, "test", &yte, &pte, Some(&unstd(&test.variance)));
        model.save_json(&models_dir.join(format!("{name}.json"))).stage("gpr")?;
    }
    csv.write(&out.join("predictions.csv"))?;
    write_json(&out.join("scaler.json"), &scaler)?;
    write_json(
        &out.join("metrics.json"),
        &GprMetrics {
            model: "gpr",
            cross_record: sp.cross,
            train_rows: keep.len(),
            train_rows_available: sp.x_train.nrows(),
            train_rows_cap: cfg.gpr.max_train_rows,
            test_rows: sp.x_test.nrows(),
            mean_test: group_mean(&outputs),
            outputs,
            kernels,
        },
    )
}

#[derive(Debug, Serialize)]
struct XlstmMetrics {
    model: &'static str,
    cross_record: bool,
    train_steps: usize,
    initial_rmse: f64,
    final_rmse: f64,
    outputs: Vec<OutputMetrics>,
    mean_test: GroupMean,
}

pub fn xlstm(cfg: &RunConfig, dir: &Path, eval_dir: Option<&Path>, out: &Path) -> CliResult<()> {
    let sp = split(cfg, dir, eval_dir)?;
    let scaler = ColumnScaler::fit(&sp.y_train);
    let mut model = XlstmModel::new(cfg.xlstm.clone()).stage("xlstm")?;
    let seqs = [(sp.x_train.clone(), scaler.apply(&sp.y_train))];
    let curve = train(&mut model, &seqs).stage("xlstm")?;
    let batches = chunk_sequences(&seqs, cfg.xlstm.chunk_len).stage("xlstm")?;
    let final_rmse = rmse_loss(&model, &batches).stage("xlstm")?;

    let mut loss = Csv::new(&["step", "rmse"]);
    for (i, l) in curve.iter().enumerate() {
        loss.row(&[Cell::U(i + 1), Cell::F(*l)]);
    }
    loss.write(&out.join("loss.csv"))?;

    // test windows continue the training sequence unless they come from another record
    let (train_pred, test_pred) = if sp.cross {
        (
            model.predict_sequence(&sp.x_train).stage("xlstm")?,
            model.predict_sequence(&sp.x_test).stage("xlstm")?,
        )
    } else {
        let full = ndarray::concatenate(Axis(0), &[sp.x_train.view(), sp.x_test.view()]).expect("same width");
        let p = model.predict_sequence(&full).stage("xlstm")?;
        let n = sp.x_train.nrows();
        (p.slice(s![..n, ..]).to_owned(), p.slice(s![n.., ..]).to_owned())
    };
    let (train_pred, test_pred) = (scaler.inverse(&train_pred), scaler.inverse(&test_pred));
    let mut csv = Csv::new(&PRED_HEADER);
    let mut outputs = Vec::new();
    for o in 0..cfg.xlstm.output_dim {
        let name = if cfg.xlstm.output_dim == NUM_OUTPUTS { output_name(o) } else { format!("out{o}") };
        let (ytr, yte) = (sp.y_train.column(o).to_vec(), sp.y_test.column(o).to_vec());
        let (ptr, pte) = (train_pred.column(o).to_vec(), test_pred.column(o).to_vec());
        outputs.push(OutputMetrics {
            name: name.clone(),
            train: gpr::evaluate(&ytr, &ptr).stage("xlstm")?,
            test: gpr::evaluate(&yte, &pte).stage("xlstm")?,
        });
        prediction_rows(&mut csv, &name, "train", &ytr, &ptr, None);
        prediction_rows(&mut csv, &name, "test", &yte, &pte, None);
    }
    csv.write(&out.join("predictions.csv"))?;
    model.save(&out.join("xlstm_model")).stage("xlstm")?;
    write_json(&out.join("scaler.json"), &scaler)?;
    write_json(
        &out.join("metrics.json"),
        &XlstmMetrics {
            model: "xlstm",
            cross_record: sp.cross,
            train_steps: curve.len(),
            initial_rmse: curve.first().copied().unwrap_or(f64::NAN),
            final_rmse,
            mean_test: group_mean(&outputs),
            outputs,
        },
    )
}

fn target_series(cfg: &RunConfig, dir: &Path) -> CliResult<Vec<(String, Vec<f64>)>> {
    let (_, t) = load_pair(dir)?;
    let y = t.to_matrix();
    Ok(cfg
        .forecast
        .targets
        .columns()
        .map(|o| (output_name(o), y.column(o).to_vec()))
        .collect())
}

#[derive(Debug, Serialize)]
struct ForecastMetrics {
    model: &'static str,
    horizon: usize,
    context_len: usize,
    num_samples: usize,
    crps_mean: f64,
    crps_std: f64,
    climatology_crps_mean: f64,
    pretrain: Option<ForecastTrainReport>,
    finetune: ForecastTrainReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CrpsFile {
    pub model: CrpsSummary,
    pub climatology: CrpsSummary,
}

pub fn forecast(cfg: &RunConfig, dir: &Path, pretrain_dir: Option<&Path>, out: &Path) -> CliResult<()> {
    let fc = &cfg.forecast.model;
    let (h, ctx) = (fc.horizon, fc.context_len);
    let series = target_series(cfg, dir)?;
    let len = series[0].1.len();
    if len < ctx + h {
        return Err(CliError::Stage(
            "forecast",
            gaitcast_core::Error::Length {
                len,
                message: format!("series need context_len + horizon = {} windows", ctx + h),
            },
        ));
    }
    let mut model = Forecaster::new(&fc.arch, &fc.lags, fc.seed).stage("forecast")?;
    let pretrain = match pretrain_dir {
        Some(p) => {
            let corpus: Vec<Vec<f64>> = target_series(cfg, p)?.into_iter().map(|(_, s)| s).collect();
            let epochs = cfg.forecast.pretrain_epochs;
            Some(train_forecaster(&mut model, &corpus, fc, epochs, fc.train.patience).stage("forecast pretrain")?)
        }
        None => None,
    };
    let prefixes: Vec<Vec<f64>> = series.iter().map(|(_, s)| s[..len - h].to_vec()).collect();
    let finetune = train_forecaster(&mut model, &prefixes, fc, fc.train.epochs, fc.train.patience).stage("forecast")?;

    let mut dists = Vec::new();
    let mut clim = Vec::new();
    let mut truths = Vec::new();
    for (name, s) in &series {
        let context = &s[len - h - ctx..len - h];
        dists.push(sample_forecast(&model, context, fc).stage("forecast")?.named(name.as_str()));
        clim.push(climatological_forecast(context, h, name).stage("forecast")?);
        truths.push(s[len - h..].to_vec());
    }
    let summary = evaluate_forecasts(&dists, &truths).stage("evaluate")?;
    let climatology = evaluate_forecasts(&clim, &truths).stage("evaluate")?;

    let mut csv = Csv::new(&["target", "step", "q05", "q25", "q50", "q75", "q95", "truth"]);
    for (d, truth) in dists.iter().zip(&truths) {
        for (t, y) in truth.iter().enumerate() {
            let mut cells = vec![Cell::S(&d.target_name), Cell::U(t + 1)];
            for q in QUANTILES {
                cells.push(Cell::F(d.quantile(q, t).stage("forecast")?));
            }
            cells.push(Cell::F(*y));
            csv.row(&cells);
        }
    }
    csv.write(&out.join("forecast.csv"))?;
    write_box_csv(&out.join("crps_box.csv"), &[("model", &summary), ("climatology", &climatology)])?;

    let mut curve = Csv::new(&["phase", "epoch", "train_nll", "val_nll"]);
    for (phase, r) in [("pretrain", pretrain.as_ref()), ("finetune", Some(&finetune))] {
        if let Some(r) = r {
            curve.row(&[Cell::S(phase), Cell::U(0), Cell::F(f64::NAN), Cell::F(r.initial_val_nll)]);
            for (e, (t, v)) in r.train_nll.iter().zip(&r.val_nll).enumerate() {
                curve.row(&[Cell::S(phase), Cell::U(e + 1), Cell::F(*t), Cell::F(*v)]);
            }
        }
    }
    curve.write(&out.join("nll_curve.csv"))?;

    let samples = Array3::from_shape_fn((dists.len(), fc.num_samples, h), |(k, p, t)| dists[k].samples[[p, t]]);
    let truth = Array2::from_shape_fn((truths.len(), h), |(k, t)| truths[k][t]);
    save_tensor(&out.join("samples.bin"), samples.view().into_dyn()).stage("forecast")?;
    save_tensor(&out.join("truth.bin"), truth.view().into_dyn()).stage("forecast")?;
    model.save(&out.join("forecaster_model")).stage("forecast")?;
    write_json(
        &out.join("crps.json"),
        &CrpsFile {
            model: summary.clone(),
            climatology: climatology.clone(),
        },
    )?;
    write_json(
        &out.join("metrics.json"),
        &ForecastMetrics {
            model: "forecast",
            horizon: h,
            context_len: ctx,
            num_samples: fc.num_samples,
            crps_mean: summary.mean,
            crps_std: summary.std,
            climatology_crps_mean: climatology.mean,
            pretrain,
            finetune,
        },
    )
}

fn write_box_csv(path: &Path, sources: &[(&str, &CrpsSummary)]) -> CliResult<()> {
    let mut csv = Csv::new(&["source", "target", "crps", "min", "q1", "median", "q3", "max"]);
    for (src, s) in sources {
        for t in &s.per_series {
            let b = t.per_step_box;
            csv.row(&[
                Cell::S(src),
                Cell::S(&t.name),
                Cell::F(t.crps),
                Cell::F(b.min),
                Cell::F(b.q1),
                Cell::F(b.median),
                Cell::F(b.q3),
                Cell::F(b.max),
            ]);
        }
        let b = s.series_box;
        csv.row(&[
            Cell::S(src),
            Cell::S("all"),
            Cell::F(s.mean),
            Cell::F(b.min),
            Cell::F(b.q1),
            Cell::F(b.median),
            Cell::F(b.q3),
            Cell::F(b.max),
        ]);
    }
    csv.write(path)
}

#[derive(Debug, Deserialize)]
struct ModelTag {
    model: String,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Per-output test MAE/RMSE recomputed from `predictions.csv`.
fn point_metrics(run: &Path) -> CliResult<Vec<(String, ErrorMetrics)>> {
    let path = run.join("predictions.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Config(format!("{}: malformed row {}", path.display(), i + 1));
        if f.len() != PRED_HEADER.len() {
            return Err(bad());
        }
        if f[1] != "test" {
            continue;
        }
        let (t, p): (f64, f64) = (f[3].parse().map_err(|_| bad())?, f[4].parse().map_err(|_| bad())?);
        match groups.last_mut() {
            Some(g) if g.0 == f[0] => {
                g.1.push(t);
                g.2.push(p);
            }
            _ => groups.push((f[0].to_string(), vec![t], vec![p])),
        }
    }
    groups
        .into_iter()
        .map(|(name, t, p)| Ok((name, gpr::evaluate(&t, &p).stage("eval")?)))
        .collect()
}

fn crps_from_samples(run: &Path) -> CliResult<CrpsSummary> {
    let samples = load_tensor(&run.join("samples.bin")).stage("eval")?;
    let truth = load_tensor(&run.join("truth.bin")).stage("eval")?;
    let names: CrpsFile = read_json(&run.join("crps.json"))?;
    let samples = samples
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|e| CliError::Stage("eval", gaitcast_core::Error::Dimension(e.to_string())))?;
    let truth = truth
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|e| CliError::Stage("eval", gaitcast_core::Error::Dimension(e.to_string())))?;
    let dists: Vec<ForecastDistribution> = samples
        .outer_iter()
        .zip(&names.model.per_series)
        .map(|(m, s)| ForecastDistribution {
            samples: m.to_owned(),
            target_name: s.name.clone(),
        })
        .collect();
    let truths: Vec<Vec<f64>> = truth.outer_iter().map(|r| r.to_vec()).collect();
    evaluate_forecasts(&dists, &truths).stage("eval")
}

pub fn eval(runs: &[PathBuf], out: &Path) -> CliResult<()> {
    let mut csv = Csv::new(&["run", "model", "output", "metric", "value"]);
    let mut boxes: Vec<(String, CrpsSummary)> = Vec::new();
    for run in runs {
        let tag: ModelTag = read_json(&run.join("metrics.json"))?;
        let run_name = run.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match tag.model.as_str() {
            "gpr" | "xlstm" => {
                for (name, m) in point_metrics(run)? {
                    csv.row(&[Cell::S(&run_name), Cell::S(&tag.model), Cell::S(&name), Cell::S("mae"), Cell::F(m.mae)]);
                    csv.row(&[Cell::S(&run_name), Cell::S(&tag.model), Cell::S(&name), Cell::S("rmse"), Cell::F(m.rmse)]);
                }
            }
            "forecast" => {
                let summary = crps_from_samples(run)?;
                for s in &summary.per_series {
                    csv.row(&[Cell::S(&run_name), Cell::S("forecast"), Cell::S(&s.name), Cell::S("crps"), Cell::F(s.crps)]);
                }
                boxes.push((run_name, summary));
            }
            other => {
                return Err(CliError::Config(format!("{}: unknown model `{other}`", run.display())));
            }
        }
    }
    csv.write(&out.join("summary.csv"))?;
    if !boxes.is_empty() {
        let refs: Vec<(&str, &CrpsSummary)> = boxes.iter().map(|(n, s)| (n.as_str(), s)).collect();
        write_box_csv(&out.join("crps_box.csv"), &refs)?;
    }
    Ok(())
}
