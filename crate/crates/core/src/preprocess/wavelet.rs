//! Periodized Daubechies-4 wavelet packet decomposition with per-subband
//! thresholding.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Daubechies-4 (8-tap) reconstruction lowpass filter.
pub const DB4: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseConfig {
    /// Fraction of each subband's max |coefficient| used as its threshold.
    pub wavelet_threshold: f64,
    pub decomposition_level: usize,
    pub threshold_mode: ThresholdMode,
    /// Symmetric-pad to a multiple of `2^level` instead of failing.
    pub pad: bool,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            wavelet_threshold: 0.08,
            decomposition_level: 8,
            threshold_mode: ThresholdMode::Soft,
            pad: true,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelet_threshold.is_finite() && self.wavelet_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "wavelet threshold must be >= 0, got {}",
                self.wavelet_threshold
            )));
        }
        if self.decomposition_level == 0 || self.decomposition_level > 30 {
            return Err(Error::Config(format!(
                "decomposition level must be in 1..=30, got {}",
                self.decomposition_level
            )));
        }
        Ok(())
    }
}

fn highpass() -> [f64; 8] {
    let mut g = [0.0; 8];
    for (k, gk) in g.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *gk = sign * DB4[7 - k];
    }
    g
}

/// One periodized analysis step: `x` -> (approximation, detail), each half length.
fn analyze(x: &[f64], lo: &[f64; 8], hi: &[f64; 8], approx: &mut [f64], detail: &mut [f64]) {
    let n = x.len();
    for i in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for k in 0..8 {
            let v = x[(2 * i + k) % n];
            a += lo[k] * v;
            d += hi[k] * v;
        }
        approx[i] = a;
        detail[i] = d;
    }
}

/// Adjoint of [`analyze`]; exact inverse because the periodized transform is orthogonal.
fn synthesize(approx: &[f64], detail: &[f64], lo: &[f64; 8], hi: &[f64; 8], out: &mut [f64]) {
    let n = out.len();
    out.fill(0.0);
    for i in 0..n / 2 {
        for k in 0..8 {
            out[(2 * i + k) % n] += lo[k] * approx[i] + hi[k] * detail[i];
        }
    }
}

/// Full packet tree down to `level`. The result holds `2^level` leaves of equal
/// length laid out contiguously (natural, not frequency, order).
pub fn packet_decompose(signal: &[f64], level: usize) -> Result<Vec<f64>> {
    let n = signal.len();
    let block = 1usize << level;
    if n == 0 || n % block != 0 {
        return Err(Error::Length {
            len: n,
            message: format!("packet decomposition to level {level} needs a multiple of {block}"),
        });
    }
    let hi = highpass();
    let mut cur = signal.to_vec();
    let mut next = vec![0.0; n];
    for lvl in 0..level {
        let node_len = n >> lvl;
        for (src, dst) in cur.chunks(node_len).zip(next.chunks_mut(node_len)) {
            let (a, d) = dst.split_at_mut(node_len / 2);
            analyze(src, &DB4, &hi, a, d);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

pub fn packet_reconstruct(leaves: &[f64], level: usize) -> Result<Vec<f64>> {
    let n = leaves.len();
    let block = 1usize << level;
    if n == 0 || n % block != 0 {
        return Err(Error::Length {
            len: n,
            message: format!("packet reconstruction from level {level} needs a multiple of {block}"),
        });
    }
    let hi = highpass();
    let mut cur = leaves.to_vec();
    let mut next = vec![0.0; n];
    for lvl in (0..level).rev() {
        let node_len = n >> lvl;
        for (src, dst) in cur.chunks(node_len).zip(next.chunks_mut(node_len)) {
            let (a, d) = src.split_at(node_len / 2);
            synthesize(a, d, &DB4, &hi, dst);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

/// Symmetric (half-sample) reflection, repeated as often as needed.
fn symmetric_index(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let r = i % period;
    if r < n {
        r
    } else {
        period - 1 - r
    }
}

pub fn wpt_denoise(signal: &[f64], cfg: &DenoiseConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = signal.len();
    if n == 0 {
        return Err(Error::Argument("cannot denoise an empty signal".into()));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("signal contains non-finite samples".into()));
    }
    let block = 1usize << cfg.decomposition_level;
    let padded_len = n.div_ceil(block) * block;
    if padded_len != n && !cfg.pad {
        return Err(Error::Length {
            len: n,
            message: format!(
                "padding disabled and length is not a multiple of 2^{} = {block}",
                cfg.decomposition_level
            ),
        });
    }
    let padded: Vec<f64> = (0..padded_len)
        .map(|i| signal[symmetric_index(i, n)])
        .collect();

    let mut leaves = packet_decompose(&padded, cfg.decomposition_level)?;
    if cfg.wavelet_threshold > 0.0 {
        let leaf_len = padded_len / block;
        for band in leaves.chunks_mut(leaf_len) {
            let peak = band.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            let t = cfg.wavelet_threshold * peak;
            for c in band.iter_mut() {
                *c = match cfg.threshold_mode {
                    ThresholdMode::Soft => c.signum() * (c.abs() - t).max(0.0),
                    ThresholdMode::Hard => {
                        if c.abs() > t {
                            *c
                        } else {
                            0.0
                        }
                    }
                };
            }
        }
    }
    let mut out = packet_reconstruct(&leaves, cfg.decomposition_level)?;
    out.truncate(n);
    Ok(out)
}
