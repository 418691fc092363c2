//! Matrix-memory cell: key/value outer products read back with a query.

use rand::Rng;

use super::block_diag::{block_diagonal_apply, BlockDiagonal};
use super::conv::CausalConv;
use crate::autograd::{Graph, Mat, Var};
use crate::nn::{Bound, Linear, Norm, ParamId, ParamStore};
use crate::{Error, Result};

/// Per-head memory `C` (`[d x d]`, rows indexed by value, columns by key),
/// normalizer `n` and stabilizer `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlstmState {
    pub c: Vec<Mat>,
    pub n: Vec<Vec<f64>>,
    pub m: Vec<f64>,
}

impl MlstmState {
    pub fn zeros(heads: usize, head_dim: usize) -> Self {
        Self {
            c: vec![Mat::zeros((head_dim, head_dim)); heads],
            n: vec![vec![0.0; head_dim]; heads],
            m: vec![0.0; heads],
        }
    }

    pub fn heads(&self) -> usize {
        self.m.len()
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|c| c.iter().all(|x| x.is_finite()))
            && self.n.iter().all(|n| n.iter().all(|x| x.is_finite()))
            && self.m.iter().all(|x| x.is_finite())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cell update from projected `q, k, v` (`k` already scaled), per-head gate
/// preactivations `i_pre, f_pre` and the output-gate preactivation `o_pre`.
pub fn mlstm_cell_update(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    i_pre: &[f64],
    f_pre: &[f64],
    o_pre: &[f64],
    state: &MlstmState,
) -> Result<(Vec<f64>, MlstmState)> {
    let heads = state.heads();
    let width = q.len();
    if heads == 0
        || width % heads != 0
        || k.len() != width
        || v.len() != width
        || o_pre.len() != width
        || i_pre.len() != heads
        || f_pre.len() != heads
    {
        return Err(Error::Dimension("mLSTM input widths disagree with the state".into()));
    }
    let d = width / heads;
    let mut next = state.clone();
    let mut h = vec![0.0; width];
    for hd in 0..heads {
        let (qs, ks, vs) = (&q[hd * d..][..d], &k[hd * d..][..d], &v[hd * d..][..d]);
        let m = (f_pre[hd] + state.m[hd]).max(i_pre[hd]);
        let ig = (i_pre[hd] - m).exp();
        let fg = (f_pre[hd] + state.m[hd] - m).exp();
        let c = &mut next.c[hd];
        for r in 0..d {
            for col in 0..d {
                c[[r, col]] = fg * state.c[hd][[r, col]] + ig * vs[r] * ks[col];
            }
        }
        let n = &mut next.n[hd];
        for j in 0..d {
            n[j] = fg * state.n[hd][j] + ig * ks[j];
        }
        let denom = n.iter().zip(qs).map(|(a, b)| a * b).sum::<f64>().abs().max(1.0);
        for r in 0..d {
            let num: f64 = (0..d).map(|col| c[[r, col]] * qs[col]).sum();
            h[hd * d + r] = sigmoid(o_pre[hd * d + r]) * num / denom;
        }
        next.m[hd] = m;
    }
    if !next.is_finite() || h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("mLSTM state became non-finite".into()));
    }
    Ok((h, next))
}

/// Weights of a bare cell.
#[derive(Debug, Clone)]
pub struct MlstmParams {
    pub heads: usize,
    pub wq: Vec<Mat>,
    pub wk: Vec<Mat>,
    pub wv: Vec<Mat>,
    /// `[3 * width x heads]`, reading `concat(q, k, v)`.
    pub w_i: Mat,
    pub b_i: Vec<f64>,
    pub w_f: Mat,
    pub b_f: Vec<f64>,
    /// `[width x width]`.
    pub w_o: Mat,
    pub b_o: Vec<f64>,
}

fn affine(x: &[f64], w: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    if w.nrows() != x.len() || w.ncols() != b.len() {
        return Err(Error::Dimension(format!(
            "affine map {:?} does not fit input {} / bias {}",
            w.dim(),
            x.len(),
            b.len()
        )));
    }
    Ok((0..w.ncols())
        .map(|j| b[j] + x.iter().zip(w.column(j)).map(|(a, c)| a * c).sum::<f64>())
        .collect())
}

/// One step where `q, k` read `x_qk` and `v` and the output gate read `x_v`.
pub fn mlstm_step_split(
    x_qk: &[f64],
    x_v: &[f64],
    state: &MlstmState,
    params: &MlstmParams,
) -> Result<(Vec<f64>, MlstmState)> {
    let heads = params.heads;
    let q = block_diagonal_apply(x_qk, &params.wq, heads)?;
    let mut k = block_diagonal_apply(x_qk, &params.wk, heads)?;
    let v = block_diagonal_apply(x_v, &params.wv, heads)?;
    let d = (q.len() / heads) as f64;
    k.iter_mut().for_each(|x| *x /= d.sqrt());
    let qkv: Vec<f64> = q.iter().chain(&k).chain(&v).copied().collect();
    let i_pre = affine(&qkv, &params.w_i, &params.b_i)?;
    let f_pre = affine(&qkv, &params.w_f, &params.b_f)?;
    let o_pre = affine(x_v, &params.w_o, &params.b_o)?;
    mlstm_cell_update(&q, &k, &v, &i_pre, &f_pre, &o_pre, state)
}

pub fn mlstm_step(x: &[f64], state: &MlstmState, params: &MlstmParams) -> Result<(Vec<f64>, MlstmState)> {
    mlstm_step_split(x, x, state, params)
}

#[derive(Debug, Clone)]
pub(crate) struct MlstmVars {
    pub c: Vec<Var>,
    pub n: Vec<Var>,
    pub m: Vec<Var>,
}

impl MlstmVars {
    pub fn zeros(g: &mut Graph, batch: usize, heads: usize, d: usize) -> Self {
        let c = g.leaf(Mat::zeros((batch, d * d)));
        let n = g.leaf(Mat::zeros((batch, d)));
        let m = g.leaf(Mat::zeros((batch, 1)));
        Self {
            c: vec![c; heads],
            n: vec![n; heads],
            m: vec![m; heads],
        }
    }
}

/// Tape version of [`mlstm_cell_update`]; returns the gated hidden state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mlstm_cell_tape(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    i_pre: Var,
    f_pre: Var,
    o_pre: Var,
    st: &MlstmVars,
) -> (Var, MlstmVars) {
    let heads = st.m.len();
    let d = g.shape(q).1 / heads;
    let mut next = MlstmVars {
        c: Vec::with_capacity(heads),
        n: Vec::with_capacity(heads),
        m: Vec::with_capacity(heads),
    };
    let mut parts = Vec::with_capacity(heads);
    for hd in 0..heads {
        let (qh, kh, vh) = (g.slice_cols(q, hd * d, d), g.slice_cols(k, hd * d, d), g.slice_cols(v, hd * d, d));
        let ip = g.slice_cols(i_pre, hd, 1);
        let fp = g.slice_cols(f_pre, hd, 1);
        let fm = g.add(fp, st.m[hd]);
        let m = g.maximum(fm, ip);
        let di = g.sub(ip, m);
        let ig = g.exp(di);
        let df = g.sub(fm, m);
        let fg = g.exp(df);
        let outer = g.row_outer(vh, kh);
        let fc = g.mul_col(st.c[hd], fg);
        let io = g.mul_col(outer, ig);
        let c = g.add(fc, io);
        let fnn = g.mul_col(st.n[hd], fg);
        let ik = g.mul_col(kh, ig);
        let n = g.add(fnn, ik);
        let num = g.row_matvec(c, qh);
        let nq = g.row_dot(n, qh);
        let nqa = g.abs(nq);
        let denom = g.max_scalar(nqa, 1.0);
        parts.push(g.div_col(num, denom));
        next.c.push(c);
        next.n.push(n);
        next.m.push(m);
    }
    let ht = g.concat_cols(&parts);
    let og = g.sigmoid(o_pre);
    (g.mul(og, ht), next)
}

/// Pre-norm mLSTM block: up-projection, conv, matrix memory, group norm,
/// learnable skip, output gating by the `z` branch, down-projection, residual add.
#[derive(Debug, Clone)]
pub struct MlstmBlock {
    pub hidden: usize,
    pub heads: usize,
    pub inner: usize,
    norm: Norm,
    up: Linear,
    up_z: Linear,
    conv: CausalConv,
    wq: BlockDiagonal,
    wk: BlockDiagonal,
    wv: BlockDiagonal,
    gate_i: Linear,
    gate_f: Linear,
    gate_o: Linear,
    group_norm: Norm,
    skip: ParamId,
    down: Linear,
}

impl MlstmBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        heads: usize,
        conv_kernel: usize,
        proj_factor: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let inner = (proj_factor * hidden as f64).round() as usize;
        if inner % heads != 0 {
            return Err(Error::Config(format!(
                "mLSTM inner width {inner} is not divisible by {heads} heads"
            )));
        }
        let norm = Norm::new(store, &format!("{name}.norm"), hidden, 1, true);
        let up = Linear::new(store, &format!("{name}.up"), hidden, inner, false, rng);
        let up_z = Linear::new(store, &format!("{name}.up_z"), hidden, inner, false, rng);
        let conv = CausalConv::new(store, &format!("{name}.conv"), inner, conv_kernel, rng);
        let wq = BlockDiagonal::new(store, &format!("{name}.q"), inner, inner, heads, rng)?;
        let wk = BlockDiagonal::new(store, &format!("{name}.k"), inner, inner, heads, rng)?;
        let wv = BlockDiagonal::new(store, &format!("{name}.v"), inner, inner, heads, rng)?;
        let gate_i = Linear::new(store, &format!("{name}.gate_i"), 3 * inner, heads, true, rng);
        let gate_f = Linear::new(store, &format!("{name}.gate_f"), 3 * inner, heads, true, rng);
        store.get_mut(gate_f.b.expect("gate has bias")).fill(1.0);
        let gate_o = Linear::new(store, &format!("{name}.gate_o"), inner, inner, true, rng);
        let group_norm = Norm::new(store, &format!("{name}.group_norm"), inner, heads, false);
        let skip = store.add_const(format!("{name}.skip"), 1, inner, 1.0);
        let down = Linear::new(store, &format!("{name}.down"), inner, hidden, false, rng);
        Ok(Self {
            hidden,
            heads,
            inner,
            norm,
            up,
            up_z,
            conv,
            wq,
            wk,
            wv,
            gate_i,
            gate_f,
            gate_o,
            group_norm,
            skip,
            down,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, xs: &[Var]) -> Vec<Var> {
        let Some(&first) = xs.first() else { return Vec::new() };
        let batch = g.shape(first).0;
        let d = self.inner / self.heads;
        let mut xm = Vec::with_capacity(xs.len());
        let mut z = Vec::with_capacity(xs.len());
        for &x in xs {
            let n = self.norm.forward(g, p, x);
            xm.push(self.up.forward(g, p, n));
            z.push(self.up_z.forward(g, p, n));
        }
        let conv: Vec<Var> = self.conv.forward(g, p, &xm).into_iter().map(|v| g.silu(v)).collect();
        let mut st = MlstmVars::zeros(g, batch, self.heads, d);
        let kscale = 1.0 / (d as f64).sqrt();
        let mut out = Vec::with_capacity(xs.len());
        for t in 0..xs.len() {
            let q = self.wq.forward(g, p, conv[t]);
            let k0 = self.wk.forward(g, p, conv[t]);
            let k = g.scale(k0, kscale);
            let v = self.wv.forward(g, p, xm[t]);
            let qkv = g.concat_cols(&[q, k, v]);
            let ip = self.gate_i.forward(g, p, qkv);
            let fp = self.gate_f.forward(g, p, qkv);
            let op = self.gate_o.forward(g, p, xm[t]);
            let (h, next) = mlstm_cell_tape(g, q, k, v, ip, fp, op, &st);
            st = next;
            let normed = self.group_norm.forward(g, p, h);
            let skip = g.mul_row(conv[t], p[self.skip]);
            let y = g.add(normed, skip);
            let sz = g.silu(z[t]);
            let gated = g.mul(y, sz);
            let dn = self.down.forward(g, p, gated);
            out.push(g.add(xs[t], dn));
        }
        out
    }

    pub fn cell_params(&self, store: &ParamStore) -> MlstmParams {
        let row = |id: Option<ParamId>| store.get(id.expect("gate has bias")).iter().copied().collect();
        MlstmParams {
            heads: self.heads,
            wq: self.wq.weights(store),
            wk: self.wk.weights(store),
            wv: self.wv.weights(store),
            w_i: store.get(self.gate_i.w).clone(),
            b_i: row(self.gate_i.b),
            w_f: store.get(self.gate_f.w).clone(),
            b_f: row(self.gate_f.b),
            w_o: store.get(self.gate_o.w).clone(),
            b_o: row(self.gate_o.b),
        }
    }

    pub fn down_projection(&self) -> ParamId {
        self.down.w
    }

    /// Pure-step inputs `(conv output, up-projection)` for one sequence `[T x hidden]`.
    pub fn cell_inputs(&self, store: &ParamStore, x: &Mat) -> Result<(Mat, Mat)> {
        let n = self.norm.apply(store, x);
        let xm = self.up.apply(store, &n);
        let mut c = super::conv::causal_conv(&xm, store.get(self.conv.kernel))? + store.get(self.conv.bias);
        c.mapv_inplace(|v| v * sigmoid(v));
        Ok((c, xm))
    }
}
