//! Tensor files.
//!
//! Binary layout, all little-endian: `u64 ndim`, then `ndim` x `u64` dims,
//! then `prod(dims)` x `f64` in row-major order. Several tensors may be
//! concatenated in one file.
//!
//! The long CSV form has header `window,channel_or_joint,feature_or_quantity,value`.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array3, ArrayD, ArrayViewD, IxDyn};

use crate::features::{FeatureTensor, TargetTensor, FEATURE_NAMES, NUM_FEATURES, QUANTITY_NAMES};
use crate::ingest::{NUM_JOINTS, SEMG_CHANNELS};
use crate::{Error, Result};

pub fn write_tensor<W: Write>(w: &mut W, t: ArrayViewD<f64>) -> std::io::Result<()> {
    w.write_all(&(t.ndim() as u64).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.as_standard_layout().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<ArrayD<f64>> {
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut word)
            .map_err(|e| Error::Dimension(format!("truncated tensor data: {e}")))?;
        Ok(word)
    };
    let ndim = u64::from_le_bytes(next(r)?) as usize;
    if ndim > 16 {
        return Err(Error::Dimension(format!("implausible tensor rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(u64::from_le_bytes(next(r)?) as usize);
    }
    let count: usize = shape.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(f64::from_le_bytes(next(r)?));
    }
    ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| Error::Dimension(e.to_string()))
}

pub fn save_tensor(path: &Path, t: ArrayViewD<f64>) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_tensor(&mut bytes.as_slice())
}

fn load_3d(path: &Path, axis1: usize, axis2: usize) -> Result<Array3<f64>> {
    let t = load_tensor(path)?;
    let shape = t.shape().to_vec();
    if shape.len() != 3 || shape[1] != axis1 || shape[2] != axis2 {
        return Err(Error::Dimension(format!(
            "{} has shape {shape:?}, expected [W, {axis1}, {axis2}]",
            path.display()
        )));
    }
    t.into_dimensionality()
        .map_err(|e| Error::Dimension(e.to_string()))
}

pub fn load_features(path: &Path) -> Result<FeatureTensor> {
    Ok(FeatureTensor {
        data: load_3d(path, SEMG_CHANNELS, NUM_FEATURES)?,
    })
}

pub fn load_targets(path: &Path) -> Result<TargetTensor> {
    Ok(TargetTensor {
        data: load_3d(path, NUM_JOINTS, 2)?,
    })
}

fn long_csv(data: &Array3<f64>, inner_names: &[&str]) -> String {
    let mut out = String::from("window,channel_or_joint,feature_or_quantity,value\n");
    for ((w, c, f), v) in data.indexed_iter() {
        let _ = writeln!(out, "{w},{c},{},{v}", inner_names[f]);
    }
    out
}

pub fn features_to_csv(t: &FeatureTensor) -> String {
    long_csv(&t.data, &FEATURE_NAMES)
}

pub fn targets_to_csv(t: &TargetTensor) -> String {
    long_csv(&t.data, &QUANTITY_NAMES)
}
