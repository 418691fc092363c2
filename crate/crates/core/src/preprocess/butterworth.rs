//! Butterworth IIR design via bilinear transform, realised as a cascade of
//! second-order sections (plus one first-order section for odd lowpass orders).

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Bandpass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub order: usize,
    pub kind: FilterKind,
    /// One cutoff for lowpass, `[low, high]` for bandpass.
    pub cutoff_hz: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            order: 7,
            kind: FilterKind::Bandpass,
            cutoff_hz: vec![20.0, 450.0],
            sample_rate_hz: crate::ingest::CANONICAL_SAMPLE_RATE_HZ,
        }
    }
}

impl FilterConfig {
    pub fn lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        Self {
            order,
            kind: FilterKind::Lowpass,
            cutoff_hz: vec![cutoff_hz],
            sample_rate_hz,
        }
    }

    pub fn bandpass(order: usize, low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Self {
        Self {
            order,
            kind: FilterKind::Bandpass,
            cutoff_hz: vec![low_hz, high_hz],
            sample_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("filter order must be >= 1".into()));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        let nyquist = self.sample_rate_hz / 2.0;
        let expected = match self.kind {
            FilterKind::Lowpass => 1,
            FilterKind::Bandpass => 2,
        };
        if self.cutoff_hz.len() != expected {
            return Err(Error::Config(format!(
                "{:?} filter needs {expected} cutoff(s), got {}",
                self.kind,
                self.cutoff_hz.len()
            )));
        }
        for &fc in &self.cutoff_hz {
            if !(fc > 0.0 && fc < nyquist) {
                return Err(Error::Config(format!(
                    "cutoff {fc} Hz must lie strictly inside (0, {nyquist}) Hz"
                )));
            }
        }
        if self.kind == FilterKind::Bandpass && self.cutoff_hz[0] >= self.cutoff_hz[1] {
            return Err(Error::Config(format!(
                "bandpass low cutoff {} must be below high cutoff {}",
                self.cutoff_hz[0], self.cutoff_hz[1]
            )));
        }
        Ok(())
    }
}

/// One biquad, `a[0]` is always 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Sos {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z_inv * self.a[1] + z2 * self.a[2];
        num / den
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    pub sections: Vec<Sos>,
    sample_rate_hz: f64,
}

impl Butterworth {
    pub fn design(cfg: &FilterConfig) -> Result<Self> {
        cfg.validate()?;
        let fs = cfg.sample_rate_hz;
        let n = cfg.order;
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();

        let prototype: Vec<Complex64> = (0..n)
            .map(|k| {
                let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
                Complex64::from_polar(1.0, theta)
            })
            .collect();

        let (analog_poles, ref_freq, numerator_so, numerator_fo) = match cfg.kind {
            FilterKind::Lowpass => {
                let wc = warp(cfg.cutoff_hz[0]);
                let poles = prototype.iter().map(|p| p * wc).collect::<Vec<_>>();
                // zeros at s = inf map to z = -1
                (poles, 0.0, [1.0, 2.0, 1.0], [1.0, 1.0, 0.0])
            }
            FilterKind::Bandpass => {
                let wl = warp(cfg.cutoff_hz[0]);
                let wh = warp(cfg.cutoff_hz[1]);
                let w0 = (wl * wh).sqrt();
                let bw = wh - wl;
                let mut poles = Vec::with_capacity(2 * n);
                for p in &prototype {
                    let pb = p * bw;
                    let disc = (pb * pb - 4.0 * w0 * w0).sqrt();
                    poles.push((pb + disc) / 2.0);
                    poles.push((pb - disc) / 2.0);
                }
                // analog centre w0 maps back to this digital frequency
                let f0 = fs / PI * (w0 / (2.0 * fs)).atan();
                // one zero at z = 1 and one at z = -1 per section
                (poles, f0, [1.0, 0.0, -1.0], [1.0, 0.0, -1.0])
            }
        };

        let k = 2.0 * fs;
        let digital: Vec<Complex64> = analog_poles
            .iter()
            .map(|s| (k + s) / (k - s))
            .collect();

        let tol = 1e-10;
        let mut complex: Vec<Complex64> = digital.iter().copied().filter(|p| p.im > tol).collect();
        complex.sort_by(|a, b| a.re.total_cmp(&b.re));
        let mut real: Vec<f64> = digital
            .iter()
            .filter(|p| p.im.abs() <= tol)
            .map(|p| p.re)
            .collect();
        real.sort_by(f64::total_cmp);

        let mut sections = Vec::new();
        for p in complex {
            sections.push(Sos {
                b: numerator_so,
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            });
        }
        let mut pairs = real.chunks_exact(2);
        for pair in pairs.by_ref() {
            sections.push(Sos {
                b: numerator_so,
                a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
            });
        }
        if let [p] = pairs.remainder() {
            sections.push(Sos {
                b: numerator_fo,
                a: [1.0, -p, 0.0],
            });
        }

        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * ref_freq / fs);
        for sec in &mut sections {
            let g = sec.response(z_inv).norm();
            for b in &mut sec.b {
                *b /= g;
            }
        }

        Ok(Self {
            sections,
            sample_rate_hz: fs,
        })
    }

    /// Complex frequency response at `freq_hz`, evaluated from the section coefficients.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.sample_rate_hz);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    /// Causal single-pass filtering, transposed direct form II per section.
    pub fn apply(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let mut out = signal.to_vec();
        for sec in &self.sections {
            let (mut s1, mut s2) = (0.0, 0.0);
            for v in out.iter_mut() {
                let x = *v;
                let y = sec.b[0] * x + s1;
                s1 = sec.b[1] * x - sec.a[1] * y + s2;
                s2 = sec.b[2] * x - sec.a[2] * y;
                *v = y;
            }
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "butterworth output became non-finite at sample {i}"
            )));
        }
        Ok(out)
    }
}

pub fn butterworth_filter(signal: &[f64], cfg: &FilterConfig) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::Argument("cannot filter an empty signal".into()));
    }
    Butterworth::design(cfg)?.apply(signal)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook digital Butterworth lowpass magnitude under bilinear warping.
    fn analytic_lowpass(order: usize, fc: f64, fs: f64, f: f64) -> f64 {
        let ratio = (PI * f / fs).tan() / (PI * fc / fs).tan();
        1.0 / (1.0 + ratio.powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn lowpass_matches_analytic_magnitude() {
        for order in 1..=8 {
            let f = Butterworth::design(&FilterConfig::lowpass(order, 100.0, 1926.0)).unwrap();
            for freq in [0.0, 10.0, 50.0, 100.0, 150.0, 400.0, 900.0] {
                let got = f.magnitude(freq);
                let want = analytic_lowpass(order, 100.0, 1926.0, freq);
                assert!((got - want).abs() < 1e-9, "order {order} f {freq}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn section_count_follows_order() {
        let lp = Butterworth::design(&FilterConfig::lowpass(7, 50.0, 1926.0)).unwrap();
        assert_eq!(lp.sections.len(), 4);
        assert_eq!(lp.sections.last().unwrap().a[2], 0.0);
        let bp = Butterworth::design(&FilterConfig::default()).unwrap();
        assert_eq!(bp.sections.len(), 7);
    }

    #[test]
    fn bandpass_has_unit_gain_at_centre_and_half_power_edges() {
        let cfg = FilterConfig::bandpass(7, 20.0, 450.0, 1926.0);
        let f = Butterworth::design(&cfg).unwrap();
        assert!((f.magnitude(20.0) - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((f.magnitude(450.0) - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(f.magnitude(0.0) < 1e-12);
        assert!(f.magnitude(962.9) < 1e-3);
    }

    #[test]
    fn poles_inside_unit_circle() {
        let f = Butterworth::design(&FilterConfig::bandpass(7, 5.0, 900.0, 1926.0)).unwrap();
        for s in &f.sections {
            // second-order stability triangle
            assert!(s.a[2].abs() < 1.0 && s.a[1].abs() < 1.0 + s.a[2]);
        }
    }

    #[test]
    fn rejects_bad_cutoffs() {
        assert!(matches!(
            butterworth_filter(&[1.0], &FilterConfig::lowpass(7, 963.0, 1926.0)),
            Err(Error::Config(_))
        ));
        assert!(FilterConfig::bandpass(4, 300.0, 200.0, 1926.0).validate().is_err());
        assert!(FilterConfig::lowpass(0, 10.0, 100.0).validate().is_err());
        let mut cfg = FilterConfig::lowpass(3, 10.0, 100.0);
        cfg.cutoff_hz.push(20.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dc_converges_to_input() {
        let cfg = FilterConfig::lowpass(7, 50.0, 1926.0);
        let y = butterworth_filter(&vec![3.5; 4000], &cfg).unwrap();
        assert!((y[3999] - 3.5).abs() < 1e-6);
    }
}
