//! Canonical record format, univariate decoupling and synthetic gait data.
//!
//! A record lives in two files: `<stem>.csv` with the sample table and
//! `<stem>.json` with `{subject_id, gait_label, sample_rate_hz}`. The CSV has
//! 26 columns in a fixed order: `t`, `emg1`..`emg9`, eight `angle*` columns and
//! eight `torque*` columns (joint order as in [`JOINTS`]). sEMG and joint
//! blocks may have different row counts; the shorter block leaves its trailing
//! cells empty.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::preprocess::{Butterworth, FilterConfig};
use crate::{Error, Result};

pub const SEMG_CHANNELS: usize = 9;
pub const NUM_JOINTS: usize = 8;
pub const CANONICAL_SAMPLE_RATE_HZ: f64 = 1926.0;

/// Column suffixes, left leg first: hip adduction, hip flexion, knee flexion, ankle flexion.
pub const JOINTS: [&str; NUM_JOINTS] = [
    "L_hipAdd",
    "L_hipFlex",
    "L_kneeFlex",
    "L_ankleFlex",
    "R_hipAdd",
    "R_hipFlex",
    "R_kneeFlex",
    "R_ankleFlex",
];

const JOINT_LONG_NAMES: [&str; NUM_JOINTS] = [
    "left_hip_adduction",
    "left_hip_flexion",
    "left_knee_flexion",
    "left_ankle_flexion",
    "right_hip_adduction",
    "right_hip_flexion",
    "right_knee_flexion",
    "right_ankle_flexion",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GaitLabel {
    DNS,
    UPS,
}

impl GaitLabel {
    /// Cadence used by the synthetic generator.
    pub fn gait_frequency_hz(self) -> f64 {
        match self {
            GaitLabel::DNS => 1.0,
            GaitLabel::UPS => 0.85,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Angle,
    Torque,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Angle => "angle",
            Quantity::Torque => "torque",
        }
    }
}

/// Header of the canonical CSV.
pub fn canonical_header() -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=SEMG_CHANNELS).map(|i| format!("emg{i}")));
    cols.extend(JOINTS.iter().map(|j| format!("angle{j}")));
    cols.extend(JOINTS.iter().map(|j| format!("torque{j}")));
    cols
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub subject_id: String,
    pub gait_label: GaitLabel,
    pub sample_rate_hz: f64,
}

/// One subject/trial: sEMG `[T x 9]` (mV), joint angles and torques `[T_j x 8]` (deg, Nm).
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub subject_id: String,
    pub gait_label: GaitLabel,
    pub semg: Array2<f64>,
    pub angles: Array2<f64>,
    pub torques: Array2<f64>,
    pub sample_rate_hz: f64,
}

impl RawRecord {
    pub fn validate(&self) -> Result<()> {
        if self.semg.ncols() != SEMG_CHANNELS {
            return Err(Error::Dimension(format!(
                "sEMG must have {SEMG_CHANNELS} columns, got {}",
                self.semg.ncols()
            )));
        }
        if self.angles.ncols() != NUM_JOINTS || self.torques.ncols() != NUM_JOINTS {
            return Err(Error::Dimension(format!(
                "angles/torques must have {NUM_JOINTS} columns, got {}/{}",
                self.angles.ncols(),
                self.torques.ncols()
            )));
        }
        if self.angles.nrows() != self.torques.nrows() {
            return Err(Error::Dimension(format!(
                "angle rows {} != torque rows {}",
                self.angles.nrows(),
                self.torques.nrows()
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Argument(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        let all = self.semg.iter().chain(&self.angles).chain(&self.torques);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("record contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn semg_len(&self) -> usize {
        self.semg.nrows()
    }

    pub fn joint_len(&self) -> usize {
        self.angles.nrows()
    }

    pub fn meta(&self) -> RecordMeta {
        RecordMeta {
            subject_id: self.subject_id.clone(),
            gait_label: self.gait_label,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateSeries {
    pub values: Vec<f64>,
    pub dt_ms: f64,
    pub name: String,
}

impl UnivariateSeries {
    pub fn new(values: Vec<f64>, dt_ms: f64, name: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("univariate series must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("univariate series has non-finite values".into()));
        }
        if !(dt_ms.is_finite() && dt_ms > 0.0) {
            return Err(Error::Argument(format!("dt_ms must be positive, got {dt_ms}")));
        }
        Ok(Self {
            values,
            dt_ms,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn series_name(joint: usize, quantity: Quantity) -> String {
    format!("{}_{}", JOINT_LONG_NAMES[joint], quantity.name())
}

pub fn to_univariate(record: &RawRecord, joint: usize, quantity: Quantity) -> Result<UnivariateSeries> {
    if joint >= NUM_JOINTS {
        return Err(Error::Range {
            index: joint,
            bound: NUM_JOINTS,
        });
    }
    let src = match quantity {
        Quantity::Angle => &record.angles,
        Quantity::Torque => &record.torques,
    };
    UnivariateSeries::new(
        src.column(joint).to_vec(),
        1000.0 / record.sample_rate_hz,
        series_name(joint, quantity),
    )
}

/// All 16 target series, angles first, in joint order.
pub fn all_targets(record: &RawRecord) -> Result<Vec<UnivariateSeries>> {
    let mut out = Vec::with_capacity(2 * NUM_JOINTS);
    for q in [Quantity::Angle, Quantity::Torque] {
        for j in 0..NUM_JOINTS {
            out.push(to_univariate(record, j, q)?);
        }
    }
    Ok(out)
}

pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

pub fn parse_record(path: &Path) -> Result<RawRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta_path = sidecar_path(path);
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: RecordMeta = serde_json::from_str(&meta_text)?;
    parse_record_str(&text, meta)
}

pub fn parse_record_str(text: &str, meta: RecordMeta) -> Result<RawRecord> {
    let header = canonical_header();
    let mut lines = text.lines().enumerate();
    let (_, head) = lines
        .next()
        .ok_or_else(|| Error::Format {
            column: "t".into(),
            message: "missing header".into(),
        })?;
    let found: Vec<&str> = head.trim_end_matches('\r').split(',').map(str::trim).collect();
    if found.len() != header.len() {
        return Err(Error::Dimension(format!(
            "expected {} columns (1 time, {SEMG_CHANNELS} sEMG, {NUM_JOINTS} angle, {NUM_JOINTS} torque), header has {}",
            header.len(),
            found.len()
        )));
    }
    if let Some((want, got)) = header.iter().zip(&found).find(|(w, g)| w.as_str() != **g) {
        return Err(Error::Format {
            column: got.to_string(),
            message: format!("expected `{want}`"),
        });
    }

    let mut semg = Vec::new();
    let mut joints = Vec::new();
    let (mut semg_done, mut joints_done) = (false, false);
    for (lineno, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row = lineno + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(Error::Dimension(format!(
                "row {row} has {} fields, expected {}",
                fields.len(),
                header.len()
            )));
        }
        let parse_block = |range: std::ops::Range<usize>, done: &mut bool, dst: &mut Vec<f64>| {
            let block = &fields[range.clone()];
            let empty = block.iter().filter(|f| f.is_empty()).count();
            if empty == block.len() {
                *done = true;
                return Ok(());
            }
            if empty > 0 || *done {
                let col = range
                    .clone()
                    .find(|&i| fields[i].is_empty())
                    .unwrap_or(range.start);
                return Err(Error::Parse {
                    row,
                    column: header[col].clone(),
                    message: "blocks must be contiguous; unexpected empty or trailing cell".into(),
                });
            }
            for i in range {
                let v: f64 = fields[i].parse().map_err(|_| Error::Parse {
                    row,
                    column: header[i].clone(),
                    message: format!("`{}` is not a number", fields[i]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: header[i].clone(),
                        message: format!("non-finite value `{}`", fields[i]),
                    });
                }
                dst.push(v);
            }
            Ok(())
        };
        parse_block(1..1 + SEMG_CHANNELS, &mut semg_done, &mut semg)?;
        parse_block(1 + SEMG_CHANNELS..header.len(), &mut joints_done, &mut joints)?;
    }

    let t = semg.len() / SEMG_CHANNELS;
    let tj = joints.len() / (2 * NUM_JOINTS);
    let semg = Array2::from_shape_vec((t, SEMG_CHANNELS), semg)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let joints = Array2::from_shape_vec((tj, 2 * NUM_JOINTS), joints)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let record = RawRecord {
        subject_id: meta.subject_id,
        gait_label: meta.gait_label,
        semg,
        angles: joints.slice(ndarray::s![.., ..NUM_JOINTS]).to_owned(),
        torques: joints.slice(ndarray::s![.., NUM_JOINTS..]).to_owned(),
        sample_rate_hz: meta.sample_rate_hz,
    };
    record.validate()?;
    Ok(record)
}

/// Serialize to canonical CSV text. Values use the shortest decimal form that
/// parses back to the identical `f64`.
pub fn record_to_csv(record: &RawRecord) -> String {
    let rows = record.semg_len().max(record.joint_len());
    let mut out = canonical_header().join(",");
    out.push('\n');
    for r in 0..rows {
        let _ = write!(out, "{}", r as f64 / record.sample_rate_hz);
        for c in 0..SEMG_CHANNELS {
            out.push(',');
            if r < record.semg_len() {
                let _ = write!(out, "{}", record.semg[[r, c]]);
            }
        }
        for block in [&record.angles, &record.torques] {
            for j in 0..NUM_JOINTS {
                out.push(',');
                if r < record.joint_len() {
                    let _ = write!(out, "{}", block[[r, j]]);
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `<path>` (CSV) and its JSON sidecar.
pub fn write_record(record: &RawRecord, path: &Path) -> Result<()> {
    record.validate()?;
    std::fs::write(path, record_to_csv(record)).map_err(|e| Error::io(path, e))?;
    let meta = serde_json::to_string_pretty(&record.meta())?;
    let meta_path = sidecar_path(path);
    std::fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))
}

/// Synthetic DNS-condition record, see [`synth_gait_labeled`].
pub fn synth_gait(seed: u64, cycles: usize, sample_rate_hz: f64) -> Result<RawRecord> {
    synth_gait_labeled(GaitLabel::DNS, seed, cycles, sample_rate_hz)
}

// Mean joint angle (deg), fundamental amplitude (deg), torque amplitude (Nm).
const JOINT_SHAPE: [(f64, f64, f64); 4] = [(0.0, 6.0, 25.0), (10.0, 25.0, 60.0), (25.0, 30.0, 40.0), (0.0, 12.0, 80.0)];

// sEMG channel -> (driving joint, velocity polarity): flexor/extensor pairs.
const CHANNEL_DRIVERS: [(usize, f64); SEMG_CHANNELS] = [
    (1, 1.0),
    (1, -1.0),
    (2, 1.0),
    (2, -1.0),
    (3, 1.0),
    (5, 1.0),
    (6, 1.0),
    (7, -1.0),
    (0, 1.0),
];

/// Deterministic synthetic gait trial.
///
/// Angles are sums of three harmonics of the label's cadence (right leg half a
/// cycle behind the left); torques mix the normalized joint velocity with a
/// phase-shifted fundamental; each sEMG channel is band-limited Gaussian noise
/// whose amplitude follows the rectified velocity of one joint.
pub fn synth_gait_labeled(
    label: GaitLabel,
    seed: u64,
    cycles: usize,
    sample_rate_hz: f64,
) -> Result<RawRecord> {
    if cycles == 0 {
        return Err(Error::Argument("cycles must be >= 1".into()));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::Argument(format!(
            "sample rate must be positive, got {sample_rate_hz}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = label.gait_frequency_hz();
    let w = 2.0 * PI * f;
    let t_len = (cycles as f64 * sample_rate_hz / f).round() as usize;
    let (amp_scale, torque_scale) = match label {
        GaitLabel::DNS => ([1.0, 1.0, 1.0, 1.0], 1.0),
        GaitLabel::UPS => ([1.2, 1.35, 1.15, 0.8], 1.25),
    };

    struct Joint {
        offset: f64,
        harmonics: [(f64, f64); 3],
        torque_amp: f64,
        torque_phase: f64,
        vel_norm: f64,
    }
    let joints: Vec<Joint> = (0..NUM_JOINTS)
        .map(|j| {
            let (offset, amp, torque_amp) = JOINT_SHAPE[j % 4];
            let amp = amp * amp_scale[j % 4] * rng.random_range(0.9..1.1);
            let leg_shift = if j >= 4 { PI } else { 0.0 };
            let base_phase = rng.random_range(0.0..2.0 * PI);
            let rel = [1.0, rng.random_range(0.2..0.45), rng.random_range(0.05..0.2)];
            let mut harmonics = [(0.0, 0.0); 3];
            for (h, slot) in harmonics.iter_mut().enumerate() {
                let phase = (h + 1) as f64 * (base_phase + leg_shift) + rng.random_range(-0.5..0.5);
                *slot = (amp * rel[h], phase);
            }
            let vel_norm = harmonics
                .iter()
                .enumerate()
                .map(|(h, (a, _))| a * (h + 1) as f64 * w)
                .sum::<f64>();
            Joint {
                offset,
                harmonics,
                torque_amp: torque_amp * torque_scale * rng.random_range(0.9..1.1),
                torque_phase: rng.random_range(0.0..2.0 * PI),
                vel_norm,
            }
        })
        .collect();

    let mut angles = Array2::zeros((t_len, NUM_JOINTS));
    let mut torques = Array2::zeros((t_len, NUM_JOINTS));
    let mut velocity = Array2::zeros((t_len, NUM_JOINTS));
    for i in 0..t_len {
        let t = i as f64 / sample_rate_hz;
        for (j, jt) in joints.iter().enumerate() {
            let (mut ang, mut vel) = (jt.offset, 0.0);
            for (h, &(a, ph)) in jt.harmonics.iter().enumerate() {
                let k = (h + 1) as f64 * w;
                ang += a * (k * t + ph).sin();
                vel += a * k * (k * t + ph).cos();
            }
            let v = vel / jt.vel_norm;
            angles[[i, j]] = ang;
            velocity[[i, j]] = v;
            torques[[i, j]] = jt.torque_amp * (0.7 * v + 0.3 * (w * t + jt.torque_phase).sin());
        }
    }

    let carrier_filter = Butterworth::design(&FilterConfig::bandpass(
        2,
        0.015 * sample_rate_hz,
        0.18 * sample_rate_hz,
        sample_rate_hz,
    ))?;
    let mut semg = Array2::zeros((t_len, SEMG_CHANNELS));
    for (c, &(joint, polarity)) in CHANNEL_DRIVERS.iter().enumerate() {
        let white: Vec<f64> = (0..t_len).map(|_| rng.sample(StandardNormal)).collect();
        let carrier = carrier_filter.apply(&white)?;
        let rms = (carrier.iter().map(|v| v * v).sum::<f64>() / t_len as f64)
            .sqrt()
            .max(f64::MIN_POSITIVE);
        let gain = rng.random_range(0.3..0.6);
        for i in 0..t_len {
            let envelope = 0.05 + (polarity * velocity[[i, joint]]).max(0.0);
            let floor: f64 = rng.sample::<f64, _>(StandardNormal) * 0.005;
            semg[[i, c]] = gain * envelope * carrier[i] / rms + floor;
        }
    }

    let record = RawRecord {
        subject_id: format!("synth-{seed:04}"),
        gait_label: label,
        semg,
        angles,
        torques,
        sample_rate_hz,
    };
    record.validate()?;
    Ok(record)
}
