//! Parameter storage, initialization, Adam, and checkpoints for the neural models.

use std::path::Path;

use ndarray::{Array2, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Grads, Graph, Mat, Var};
use crate::tensor_io::{read_tensor, write_tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered parameter matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrix of shape `[fan_in x fan_out]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let m = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        self.add(name, m)
    }

    pub fn add_const(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Array2::from_elem((rows, cols), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// Registers every parameter as a leaf of `g`; index the result with `ParamId.0`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.values.iter().map(|v| g.leaf(v.clone())).collect())
    }

    pub fn grads(&self, bound: &Bound, grads: &Grads) -> Vec<Mat> {
        self.values
            .iter()
            .zip(&bound.0)
            .map(|(v, var)| grads.get_or_zeros(*var, v.dim()))
            .collect()
    }

    /// Copies values from `other`, which must hold the same names and shapes in the same order.
    pub fn assign(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Dimension("checkpoint parameter names do not match the model".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.dim() != src.dim() {
                return Err(Error::Dimension(format!(
                    "checkpoint tensor shape {:?} does not match model shape {:?}",
                    src.dim(),
                    dst.dim()
                )));
            }
            dst.assign(src);
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path, config: &serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = CheckpointManifest {
            config: config.clone(),
            tensors: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, v)| TensorEntry {
                    name: n.clone(),
                    shape: v.shape().to_vec(),
                })
                .collect(),
        };
        let mpath = dir.join(MANIFEST_FILE);
        std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)? + "\n")
            .map_err(|e| Error::io(&mpath, e))?;
        let mut buf = Vec::new();
        for v in &self.values {
            write_tensor(&mut buf, v.view().into_dyn()).expect("writing to memory");
        }
        let tpath = dir.join(TENSORS_FILE);
        std::fs::write(&tpath, buf).map_err(|e| Error::io(&tpath, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        let tpath = dir.join(TENSORS_FILE);
        let bytes = std::fs::read(&tpath).map_err(|e| Error::io(&tpath, e))?;
        let mut reader = bytes.as_slice();
        let mut store = ParamStore::new();
        for entry in &manifest.tensors {
            let t = read_tensor(&mut reader)?;
            if t.shape() != entry.shape.as_slice() || t.ndim() != 2 {
                return Err(Error::Dimension(format!(
                    "tensor {} has shape {:?}, manifest says {:?}",
                    entry.name,
                    t.shape(),
                    entry.shape
                )));
            }
            let m = t
                .into_shape_with_order(IxDyn(&entry.shape))
                .and_then(|t| t.into_dimensionality())
                .map_err(|e| Error::Dimension(e.to_string()))?;
            store.add(entry.name.clone(), m);
        }
        Ok((store, manifest.config))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Mat> = store.values.iter().map(|v| Mat::zeros(v.dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Mat]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in store
            .values
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                });
        }
    }
}

/// Dense layer `x W + b` with `W` of shape `[d_in x d_out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), d_in, d_out, rng);
        let b = bias.then(|| store.add_const(format!("{name}.b"), 1, d_out, 0.0));
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let y = g.matmul(x, p[self.w]);
        match self.b {
            Some(b) => g.add_row(y, p[b]),
            None => y,
        }
    }

    pub fn apply(&self, store: &ParamStore, x: &Mat) -> Mat {
        let y = x.dot(store.get(self.w));
        match self.b {
            Some(b) => y + store.get(b),
            None => y,
        }
    }
}

/// Layer norm (`groups == 1`) or group norm with a learnable scale and optional shift.
#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: Option<ParamId>,
    pub groups: usize,
}

pub const NORM_EPS: f64 = 1e-5;

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, groups: usize, shift: bool) -> Self {
        let gamma = store.add_const(format!("{name}.gamma"), 1, dim, 1.0);
        let beta = shift.then(|| store.add_const(format!("{name}.beta"), 1, dim, 0.0));
        Self { gamma, beta, groups }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let n = g.row_norm(x, self.groups, NORM_EPS);
        let y = g.mul_row(n, p[self.gamma]);
        match self.beta {
            Some(b) => g.add_row(y, p[b]),
            None => y,
        }
    }

    pub fn apply(&self, store: &ParamStore, x: &Mat) -> Mat {
        let (n, _) = crate::autograd::row_norm(x, self.groups, NORM_EPS);
        let y = n * store.get(self.gamma);
        match self.beta {
            Some(b) => y + store.get(b),
            None => y,
        }
    }
}

/// Largest per-tensor relative error `|a - n| / max(|a| + |n|, floor)` using
/// L2 norms over each tensor.
pub fn relative_error(analytic: &Mat, numeric: &Mat, floor: f64) -> f64 {
    let diff = (analytic - numeric).mapv(|x| x * x).sum().sqrt();
    let scale = analytic.mapv(|x| x * x).sum().sqrt() + numeric.mapv(|x| x * x).sum().sqrt();
    diff / scale.max(floor)
}
