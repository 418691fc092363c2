use std::path::Path;

use ndarray::{s, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lag_values, LagSet};
use crate::autograd::{softplus, Graph, Mat, Var};
use crate::nn::{Bound, Linear, Norm, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            width: 64,
            layers: 2,
            heads: 4,
            mlp_hidden: 128,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.layers == 0 || self.heads == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("forecaster sizes must be positive".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

pub const SIGMA_FLOOR: f64 = 1e-6;
pub const MIN_DF: f64 = 2.0;

/// Student-t parameters for one step in scaled space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistHead {
    pub nu: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl DistHead {
    fn from_raw(r: ndarray::ArrayView1<f64>) -> Self {
        Self {
            nu: MIN_DF + softplus(r[0]),
            mu: r[1],
            sigma: softplus(r[2]) + SIGMA_FLOOR,
        }
    }

    /// Median of the location-scale Student-t, i.e. `mu`.
    pub fn median(&self) -> f64 {
        self.mu
    }
}

#[derive(Debug, Clone)]
struct Layer {
    attn_norm: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    mlp_norm: Norm,
    mlp_in: Linear,
    mlp_out: Linear,
}

#[derive(Debug, Clone)]
pub struct Forecaster {
    pub arch: ArchConfig,
    pub lags: LagSet,
    pub seed: u64,
    pub store: ParamStore,
    in_proj: Linear,
    layers: Vec<Layer>,
    final_norm: Norm,
    head: Linear,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    arch: ArchConfig,
    lags: LagSet,
    seed: u64,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Keys and values of the context tokens, per layer and head, each `[n x head_dim]`.
#[derive(Debug, Clone)]
pub(crate) struct Prefix {
    k: Vec<Vec<Mat>>,
    v: Vec<Vec<Mat>>,
}

/// Keys and values appended by generation, per layer and head, as `[paths x capacity x head_dim]`.
#[derive(Debug, Clone)]
pub(crate) struct GenCache {
    prefix: Prefix,
    k: Vec<Vec<Array3<f64>>>,
    v: Vec<Vec<Array3<f64>>>,
    len: usize,
}

impl GenCache {
    pub fn new(prefix: Prefix, paths: usize, capacity: usize) -> Self {
        let empty = |p: &Vec<Vec<Mat>>| -> Vec<Vec<Array3<f64>>> {
            p.iter()
                .map(|heads| heads.iter().map(|m| Array3::zeros((paths, capacity, m.ncols()))).collect())
                .collect()
        };
        Self {
            k: empty(&prefix.k),
            v: empty(&prefix.v),
            prefix,
            len: 0,
        }
    }
}

impl Forecaster {
    pub fn new(arch: &ArchConfig, lags: &LagSet, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = arch.width;
        let in_proj = Linear::new(&mut store, "in_proj", 1 + lags.len(), w, true, &mut rng);
        let layers = (0..arch.layers)
            .map(|l| {
                let n = format!("layer{l}");
                Layer {
                    attn_norm: Norm::new(&mut store, &format!("{n}.attn_norm"), w, 1, true),
                    q: Linear::new(&mut store, &format!("{n}.q"), w, w, true, &mut rng),
                    k: Linear::new(&mut store, &format!("{n}.k"), w, w, true, &mut rng),
                    v: Linear::new(&mut store, &format!("{n}.v"), w, w, true, &mut rng),
                    o: Linear::new(&mut store, &format!("{n}.o"), w, w, true, &mut rng),
                    mlp_norm: Norm::new(&mut store, &format!("{n}.mlp_norm"), w, 1, true),
                    mlp_in: Linear::new(&mut store, &format!("{n}.mlp_in"), w, arch.mlp_hidden, true, &mut rng),
                    mlp_out: Linear::new(&mut store, &format!("{n}.mlp_out"), arch.mlp_hidden, w, true, &mut rng),
                }
            })
            .collect();
        let final_norm = Norm::new(&mut store, "final_norm", w, 1, true);
        let head = Linear::new(&mut store, "head", w, 3, true, &mut rng);
        // start near unit predictive scale
        store.get_mut(head.b.expect("bias"))[[0, 2]] = (std::f64::consts::E - 1.0).ln();
        Ok(Self {
            arch: arch.clone(),
            lags: lags.clone(),
            seed,
            store,
            in_proj,
            layers,
            final_norm,
            head,
        })
    }

    pub fn token_dim(&self) -> usize {
        1 + self.lags.len()
    }

    /// One token per position `t >= max_lag`: `[x_t, x_{t-l} for l in lags]`.
    pub fn tokens(&self, scaled: &[f64]) -> Result<Mat> {
        let start = self.lags.max_lag();
        if scaled.len() <= start {
            return Err(Error::History {
                t: scaled.len().saturating_sub(1),
                required: start,
            });
        }
        let mut m = Mat::zeros((scaled.len() - start, self.token_dim()));
        for (row, t) in (start..scaled.len()).enumerate() {
            m[[row, 0]] = scaled[t];
            for (j, v) in lag_values(scaled, t, &self.lags)?.into_iter().enumerate() {
                m[[row, j + 1]] = v;
            }
        }
        Ok(m)
    }

    /// Tape forward over a token matrix; returns `(nu, mu, sigma)`, each `[n x 1]`.
    pub(crate) fn forward_tape(&self, g: &mut Graph, p: &Bound, tokens: Var) -> (Var, Var, Var) {
        let d = self.arch.width / self.arch.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut h = self.in_proj.forward(g, p, tokens);
        for layer in &self.layers {
            let a = layer.attn_norm.forward(g, p, h);
            let q = layer.q.forward(g, p, a);
            let k = layer.k.forward(g, p, a);
            let v = layer.v.forward(g, p, a);
            let heads: Vec<Var> = (0..self.arch.heads)
                .map(|hd| {
                    let qh = g.slice_cols(q, hd * d, d);
                    let kh = g.slice_cols(k, hd * d, d);
                    let vh = g.slice_cols(v, hd * d, d);
                    let kt = g.transpose(kh);
                    let scores = g.matmul(qh, kt);
                    let w = g.causal_softmax(scores, scale);
                    g.matmul(w, vh)
                })
                .collect();
            let cat = g.concat_cols(&heads);
            let att = layer.o.forward(g, p, cat);
            h = g.add(h, att);
            let m = layer.mlp_norm.forward(g, p, h);
            let u = layer.mlp_in.forward(g, p, m);
            let su = g.silu(u);
            let o = layer.mlp_out.forward(g, p, su);
            h = g.add(h, o);
        }
        let n = self.final_norm.forward(g, p, h);
        let raw = self.head.forward(g, p, n);
        let r0 = g.slice_cols(raw, 0, 1);
        let sp0 = g.softplus(r0);
        let nu = g.add_scalar(sp0, MIN_DF);
        let mu = g.slice_cols(raw, 1, 1);
        let r2 = g.slice_cols(raw, 2, 1);
        let sp2 = g.softplus(r2);
        let sigma = g.add_scalar(sp2, SIGMA_FLOOR);
        (nu, mu, sigma)
    }

    fn mlp(&self, layer: &Layer, h: &Mat) -> Mat {
        let m = layer.mlp_norm.apply(&self.store, h);
        let u = layer.mlp_in.apply(&self.store, &m).mapv(silu);
        layer.mlp_out.apply(&self.store, &u)
    }

    fn head_raw(&self, h: &Mat) -> Mat {
        let n = self.final_norm.apply(&self.store, h);
        self.head.apply(&self.store, &n)
    }

    /// Full causal pass over a token matrix without a tape.
    pub(crate) fn prefill(&self, tokens: &Mat) -> (Prefix, Mat) {
        let d = self.arch.width / self.arch.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let n = tokens.nrows();
        let mut h = self.in_proj.apply(&self.store, tokens);
        let mut prefix = Prefix {
            k: Vec::new(),
            v: Vec::new(),
        };
        for layer in &self.layers {
            let a = layer.attn_norm.apply(&self.store, &h);
            let q = layer.q.apply(&self.store, &a);
            let k = layer.k.apply(&self.store, &a);
            let v = layer.v.apply(&self.store, &a);
            let mut cat = Mat::zeros((n, self.arch.width));
            for hd in 0..self.arch.heads {
                let cols = s![.., hd * d..(hd + 1) * d];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t());
                for i in 0..n {
                    let mut row = scores.row_mut(i);
                    let mx = row.iter().take(i + 1).fold(f64::NEG_INFINITY, |a, &b| a.max(scale * b));
                    let mut z = 0.0;
                    for j in 0..n {
                        row[j] = if j <= i { (scale * row[j] - mx).exp() } else { 0.0 };
                        z += row[j];
                    }
                    row.mapv_inplace(|x| x / z);
                }
                cat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            }
            h = h + layer.o.apply(&self.store, &cat);
            h = &h + &self.mlp(layer, &h);
            let split = |m: &Mat| -> Vec<Mat> {
                (0..self.arch.heads)
                    .map(|hd| m.slice(s![.., hd * d..(hd + 1) * d]).to_owned())
                    .collect()
            };
            prefix.k.push(split(&k));
            prefix.v.push(split(&v));
        }
        (prefix, self.head_raw(&h))
    }

    /// One generation step for a batch of paths (`tokens` is `[paths x token_dim]`).
    /// Each new token attends to the most recent `prefix length` positions.
    pub(crate) fn step(&self, cache: &mut GenCache, tokens: &Mat) -> Mat {
        let d = self.arch.width / self.arch.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let paths = tokens.nrows();
        let s_idx = cache.len;
        let n_prefix = cache.prefix.k[0][0].nrows();
        let start = (s_idx + 1).min(n_prefix);
        let mut h = self.in_proj.apply(&self.store, tokens);
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer.attn_norm.apply(&self.store, &h);
            let q = layer.q.apply(&self.store, &a);
            let k = layer.k.apply(&self.store, &a);
            let v = layer.v.apply(&self.store, &a);
            let mut cat = Mat::zeros((paths, self.arch.width));
            for hd in 0..self.arch.heads {
                let cols = hd * d..(hd + 1) * d;
                let (kc, vc) = (&mut cache.k[l][hd], &mut cache.v[l][hd]);
                kc.slice_mut(s![.., s_idx, ..]).assign(&k.slice(s![.., cols.clone()]));
                vc.slice_mut(s![.., s_idx, ..]).assign(&v.slice(s![.., cols.clone()]));
                let kp = cache.prefix.k[l][hd].slice(s![start.., ..]);
                let vp = cache.prefix.v[l][hd].slice(s![start.., ..]);
                let qh = q.slice(s![.., cols.clone()]);
                let mut sp = qh.dot(&kp.t()) * scale;
                for p in 0..paths {
                    let kn = kc.slice(s![p, ..=s_idx, ..]);
                    let vn = vc.slice(s![p, ..=s_idx, ..]);
                    let mut own = kn.dot(&qh.row(p)) * scale;
                    let mut row = sp.row_mut(p);
                    let mx = row.iter().chain(own.iter()).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|x| (x - mx).exp());
                    own.mapv_inplace(|x| (x - mx).exp());
                    let z = row.sum() + own.sum();
                    let out = (row.dot(&vp) + own.dot(&vn)) / z;
                    cat.slice_mut(s![p, cols.clone()]).assign(&out);
                }
            }
            h = h + layer.o.apply(&self.store, &cat);
            h = &h + &self.mlp(layer, &h);
        }
        cache.len += 1;
        self.head_raw(&h)
    }

    /// Next-step distribution at every token position of an already scaled sequence.
    pub fn position_dists(&self, scaled: &[f64]) -> Result<Vec<DistHead>> {
        let tokens = self.tokens(scaled)?;
        let (_, raw) = self.prefill(&tokens);
        Ok(raw.axis_iter(Axis(0)).map(DistHead::from_raw).collect())
    }

    pub(crate) fn dists_from_raw(raw: &Mat) -> Vec<DistHead> {
        raw.axis_iter(Axis(0)).map(DistHead::from_raw).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = Manifest {
            arch: self.arch.clone(),
            lags: self.lags.clone(),
            seed: self.seed,
        };
        self.store.save(dir, &serde_json::to_value(manifest)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (store, cfg) = ParamStore::load(dir)?;
        let m: Manifest = serde_json::from_value(cfg)?;
        let mut model = Self::new(&m.arch, &m.lags, m.seed)?;
        model.store.assign(&store)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> Forecaster {
        let arch = ArchConfig {
            width: 8,
            layers: 2,
            heads: 2,
            mlp_hidden: 12,
        };
        Forecaster::new(&arch, &LagSet::dense(3).unwrap(), 4).unwrap()
    }

    fn random_series(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn tokens_hold_value_then_lags() {
        let m = small();
        let t = m.tokens(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t.dim(), (2, 4));
        assert_eq!(t.row(0).to_vec(), vec![4.0, 3.0, 2.0, 1.0]);
        assert_eq!(t.row(1).to_vec(), vec![5.0, 4.0, 3.0, 2.0]);
        assert!(m.tokens(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn tape_matches_prefill() {
        let m = small();
        let x = random_series(20, 1);
        let tokens = m.tokens(&x).unwrap();
        let mut g = Graph::new();
        let p = m.store.bind(&mut g);
        let tv = g.leaf(tokens.clone());
        let (nu, mu, sigma) = m.forward_tape(&mut g, &p, tv);
        let dists = m.position_dists(&x).unwrap();
        for (i, d) in dists.iter().enumerate() {
            assert!((g.value(nu)[[i, 0]] - d.nu).abs() < 1e-12);
            assert!((g.value(mu)[[i, 0]] - d.mu).abs() < 1e-12);
            assert!((g.value(sigma)[[i, 0]] - d.sigma).abs() < 1e-12);
            assert!(d.nu > 2.0 && d.sigma > 0.0);
        }
    }

    #[test]
    fn positions_ignore_the_future() {
        let m = small();
        let x = random_series(30, 2);
        let base = m.position_dists(&x).unwrap();
        let mut y = x.clone();
        y[20] += 4.0;
        let moved = m.position_dists(&y).unwrap();
        // token row r sits at time r + 3
        for r in 0..base.len() {
            assert_eq!(base[r] == moved[r], r + 3 < 20, "row {r}");
        }
    }

    #[test]
    fn single_layer_step_equals_full_pass_within_window() {
        let arch = ArchConfig {
            width: 8,
            layers: 1,
            heads: 2,
            mlp_hidden: 12,
        };
        let m = Forecaster::new(&arch, &LagSet::dense(2).unwrap(), 9).unwrap();
        let x = random_series(14, 4);
        // one layer: keys depend only on their own token, so a step over the
        // sliding window equals a fresh pass over the same window
        let (prefix, _) = m.prefill(&m.tokens(&x[..10]).unwrap());
        let mut cache = GenCache::new(prefix, 2, 4);
        let mut raws = Vec::new();
        for t in 10..13 {
            let tok = m.tokens(&x[..=t]).unwrap().slice(s![-1.., ..]).to_owned();
            let both = ndarray::concatenate(Axis(0), &[tok.view(), tok.view()]).unwrap();
            raws.push(m.step(&mut cache, &both));
        }
        for (i, t) in (10..13).enumerate() {
            let window = &x[t + 1 - 10..=t];
            let (_, full) = m.prefill(&m.tokens(window).unwrap());
            let last = full.row(full.nrows() - 1);
            for c in 0..3 {
                assert!((raws[i][[0, c]] - last[c]).abs() < 1e-12);
                assert_eq!(raws[i][[0, c]], raws[i][[1, c]]);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Forecaster::load(dir.path()).unwrap();
        let x = random_series(12, 5);
        assert_eq!(back.position_dists(&x).unwrap(), m.position_dists(&x).unwrap());
    }
}
