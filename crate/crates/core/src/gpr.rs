//! Exact Gaussian process regression with a squared-exponential kernel
//! `k(x, x') = sf2 * exp(-|x - x'|^2 / (2 l^2))`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SIGNAL_VARIANCE_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const LENGTH_SCALE_BOUNDS: (f64, f64) = (1e-2, 1e2);
pub const MIN_NOISE_VARIANCE: f64 = 1e-10;
pub const DEFAULT_NOISE_VARIANCE: f64 = 1e-6;
const JITTER_ESCALATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self> {
        let in_bounds = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        if !in_bounds(signal_variance, SIGNAL_VARIANCE_BOUNDS) {
            return Err(Error::Argument(format!(
                "signal variance {signal_variance} outside {SIGNAL_VARIANCE_BOUNDS:?}"
            )));
        }
        if !in_bounds(length_scale, LENGTH_SCALE_BOUNDS) {
            return Err(Error::Argument(format!(
                "length scale {length_scale} outside {LENGTH_SCALE_BOUNDS:?}"
            )));
        }
        if !(noise_variance.is_finite() && noise_variance >= MIN_NOISE_VARIANCE) {
            return Err(Error::Argument(format!(
                "noise variance {noise_variance} below {MIN_NOISE_VARIANCE}"
            )));
        }
        Ok(Self {
            signal_variance,
            length_scale,
            noise_variance,
        })
    }

    fn k_from_sqdist(&self, d2: f64) -> f64 {
        self.signal_variance * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

fn sqdist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

pub fn kernel_eval(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::Dimension(format!(
            "kernel inputs have dimensions {} and {}",
            x.len(),
            x2.len()
        )));
    }
    Ok(params.k_from_sqdist(sqdist(ArrayView1::from(x), ArrayView1::from(x2))))
}

/// How `fit` chooses kernel hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyperparams {
    Fixed(KernelParams),
    /// Maximise the log marginal likelihood over the bounded (sf2, l) box.
    Optimize { noise_variance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GprModel {
    /// Noise variance here is the value actually used, after any jitter escalation.
    pub params: KernelParams,
    pub x_train: Array2<f64>,
    pub y_train: Array1<f64>,
    pub alpha: Array1<f64>,
    /// Lower Cholesky factor of `K + noise * I`.
    pub chol: Array2<f64>,
}

/// In-place lower Cholesky; returns false if the matrix is not numerically PD.
fn cholesky(a: &mut Array2<f64>) -> bool {
    let n = a.nrows();
    for j in 0..n {
        for i in j..n {
            let mut s = a[[i, j]];
            {
                let ri = a.row(i);
                let rj = a.row(j);
                let ri = ri.as_slice().expect("standard layout");
                let rj = rj.as_slice().expect("standard layout");
                s -= ri[..j].iter().zip(&rj[..j]).map(|(p, q)| p * q).sum::<f64>();
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return false;
                }
                a[[j, j]] = s.sqrt();
            } else {
                a[[i, j]] = s / a[[j, j]];
            }
        }
        for i in 0..j {
            a[[i, j]] = 0.0;
        }
    }
    true
}

fn solve_lower(l: &Array2<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in 0..n {
        let row = l.row(i);
        let row = row.as_slice().expect("standard layout");
        let s: f64 = row[..i].iter().zip(&b[..i]).map(|(p, q)| p * q).sum();
        b[i] = (b[i] - s) / row[i];
    }
}

fn solve_upper_transposed(l: &Array2<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[[k, i]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
}

fn squared_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let v = sqdist(x.row(i), x.row(j));
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Cholesky of `K + noise I` with up to three x10 noise escalations.
fn factor(d2: &Array2<f64>, params: &KernelParams) -> Result<(Array2<f64>, KernelParams)> {
    let mut p = *params;
    for attempt in 0..=JITTER_ESCALATIONS {
        let mut k = d2.mapv(|v| p.k_from_sqdist(v));
        for i in 0..k.nrows() {
            k[[i, i]] += p.noise_variance;
        }
        if cholesky(&mut k) {
            if attempt > 0 {
                log::warn!(
                    "kernel matrix needed jitter escalation to noise variance {:e}",
                    p.noise_variance
                );
            }
            return Ok((k, p));
        }
        p.noise_variance *= 10.0;
    }
    Err(Error::Conditioning {
        attempts: JITTER_ESCALATIONS,
    })
}

fn check_training(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Argument("GPR needs at least one training row".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} training rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("GPR training data must be finite".into()));
    }
    Ok(())
}

fn lml_from_factor(chol: &Array2<f64>, y: ArrayView1<f64>) -> (f64, Array1<f64>) {
    let n = y.len();
    let mut alpha = y.to_vec();
    solve_lower(chol, &mut alpha);
    let fit: f64 = alpha.iter().map(|v| v * v).sum();
    solve_upper_transposed(chol, &mut alpha);
    let logdet: f64 = (0..n).map(|i| chol[[i, i]].ln()).sum();
    let lml = -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    (lml, Array1::from(alpha))
}

pub fn log_marginal_likelihood(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    params: &KernelParams,
) -> Result<f64> {
    check_training(x, y)?;
    let (chol, _) = factor(&squared_distances(x), params)?;
    Ok(lml_from_factor(&chol, y).0)
}

/// Log-spaced multi-start compass search over the (sf2, l) bounds.
///
/// A 9x9 log grid seeds the search; the five best grid points start
/// independent bounded compass searches and the overall best is returned.
pub fn optimize_hyperparams(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    noise_variance: f64,
) -> Result<KernelParams> {
    check_training(x, y)?;
    KernelParams::new(1.0, 1.0, noise_variance)?;
    let d2 = squared_distances(x);
    let lo = [SIGNAL_VARIANCE_BOUNDS.0.ln(), LENGTH_SCALE_BOUNDS.0.ln()];
    let hi = [SIGNAL_VARIANCE_BOUNDS.1.ln(), LENGTH_SCALE_BOUNDS.1.ln()];
    let eval = |p: [f64; 2]| -> f64 {
        let params = KernelParams {
            signal_variance: p[0].exp(),
            length_scale: p[1].exp(),
            noise_variance,
        };
        match factor(&d2, &params) {
            Ok((chol, _)) => lml_from_factor(&chol, y).0,
            Err(_) => f64::NEG_INFINITY,
        }
    };

    const GRID: usize = 9;
    let mut grid = Vec::with_capacity(GRID * GRID);
    for a in 0..GRID {
        for b in 0..GRID {
            let p = [
                lo[0] + (hi[0] - lo[0]) * a as f64 / (GRID - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * b as f64 / (GRID - 1) as f64,
            ];
            grid.push((eval(p), p));
        }
    }
    grid.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best = grid[0];
    for &(start_val, start) in grid.iter().take(5) {
        let mut cur = (start_val, start);
        let mut step = [(hi[0] - lo[0]) / (GRID - 1) as f64 / 2.0, (hi[1] - lo[1]) / (GRID - 1) as f64 / 2.0];
        let mut evals = 0;
        while step[0].max(step[1]) > 1e-4 && evals < 400 {
            let mut moved = false;
            for dim in 0..2 {
                for sign in [1.0, -1.0] {
                    let mut p = cur.1;
                    p[dim] = (p[dim] + sign * step[dim]).clamp(lo[dim], hi[dim]);
                    if p == cur.1 {
                        continue;
                    }
                    let v = eval(p);
                    evals += 1;
                    if v > cur.0 {
                        cur = (v, p);
                        moved = true;
                    }
                }
            }
            if !moved {
                step = [step[0] / 2.0, step[1] / 2.0];
            }
        }
        if cur.0 > best.0 {
            best = cur;
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Conditioning {
            attempts: JITTER_ESCALATIONS,
        });
    }
    KernelParams::new(
        best.1[0].exp().clamp(SIGNAL_VARIANCE_BOUNDS.0, SIGNAL_VARIANCE_BOUNDS.1),
        best.1[1].exp().clamp(LENGTH_SCALE_BOUNDS.0, LENGTH_SCALE_BOUNDS.1),
        noise_variance,
    )
}

pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, hyper: Hyperparams) -> Result<GprModel> {
    check_training(x, y)?;
    let params = match hyper {
        Hyperparams::Fixed(p) => KernelParams::new(p.signal_variance, p.length_scale, p.noise_variance)?,
        Hyperparams::Optimize { noise_variance } => optimize_hyperparams(x, y, noise_variance)?,
    };
    let (chol, params) = factor(&squared_distances(x), &params)?;
    let (_, alpha) = lml_from_factor(&chol, y);
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("GPR solve vector is non-finite".into()));
    }
    Ok(GprModel {
        params,
        x_train: x.to_owned(),
        y_train: y.to_owned(),
        alpha,
        chol,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GprModel {
    pub fn dim(&self) -> usize {
        self.x_train.ncols()
    }

    pub fn predict(&self, x_query: ArrayView2<f64>) -> Result<Prediction> {
        if x_query.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "query dimension {} != training dimension {}",
                x_query.ncols(),
                self.dim()
            )));
        }
        let n = self.x_train.nrows();
        let p = &self.params;
        let mut mean = Vec::with_capacity(x_query.nrows());
        let mut variance = Vec::with_capacity(x_query.nrows());
        let mut kstar = vec![0.0; n];
        for q in x_query.rows() {
            for (i, xi) in self.x_train.rows().into_iter().enumerate() {
                kstar[i] = p.k_from_sqdist(sqdist(q, xi));
            }
            mean.push(kstar.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum());
            solve_lower(&self.chol, &mut kstar);
            let explained: f64 = kstar.iter().map(|v| v * v).sum();
            variance.push((p.signal_variance - explained + p.noise_variance).max(0.0));
        }
        Ok(Prediction { mean, variance })
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        lml_from_factor(&self.chol, self.y_train.view()).0
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&GprModelFile::from(self))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: GprModelFile = serde_json::from_str(&text)?;
        file.into_model()
    }
}

pub fn predict(model: &GprModel, x_query: ArrayView2<f64>) -> Result<Prediction> {
    model.predict(x_query)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub rmse: f64,
}

pub fn evaluate(y_true: &[f64], y_pred: &[f64]) -> Result<ErrorMetrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} truths vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Argument("cannot evaluate empty predictions".into()));
    }
    let n = y_true.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        let e = p - t;
        abs += e.abs();
        sq += e * e;
    }
    Ok(ErrorMetrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
    })
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse17(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Argument(format!("`{s}` is not a float")))
}

/// On-disk model: hyperparameters and training arrays as 17-significant-digit
/// decimal strings. The factorization is recomputed on load.
#[derive(Debug, Serialize, Deserialize)]
struct GprModelFile {
    signal_variance: String,
    length_scale: String,
    noise_variance: String,
    x_train: Vec<Vec<String>>,
    y_train: Vec<String>,
}

impl From<&GprModel> for GprModelFile {
    fn from(m: &GprModel) -> Self {
        Self {
            signal_variance: fmt17(m.params.signal_variance),
            length_scale: fmt17(m.params.length_scale),
            noise_variance: fmt17(m.params.noise_variance),
            x_train: m
                .x_train
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&v| fmt17(v)).collect())
                .collect(),
            y_train: m.y_train.iter().map(|&v| fmt17(v)).collect(),
        }
    }
}

impl GprModelFile {
    fn into_model(self) -> Result<GprModel> {
        let n = self.x_train.len();
        let d = self.x_train.first().map_or(0, Vec::len);
        let flat = self
            .x_train
            .iter()
            .flatten()
            .map(|s| parse17(s))
            .collect::<Result<Vec<_>>>()?;
        let x = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::Dimension(e.to_string()))?;
        let y = self
            .y_train
            .iter()
            .map(|s| parse17(s))
            .collect::<Result<Array1<_>>>()?;
        let params = KernelParams::new(
            parse17(&self.signal_variance)?,
            parse17(&self.length_scale)?,
            parse17(&self.noise_variance)?,
        )?;
        fit(x.view(), y.view(), Hyperparams::Fixed(params))
    }
}
