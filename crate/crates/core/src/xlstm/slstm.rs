//! Scalar-memory cell with exponential gates and a log-domain stabilizer.

use rand::Rng;

use super::block_diag::{block_diagonal_apply, BlockDiagonal};
use super::conv::CausalConv;
use crate::autograd::{Graph, Mat, Var};
use crate::nn::{Bound, Linear, Norm, ParamId, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SlstmState {
    pub c: Vec<f64>,
    pub n: Vec<f64>,
    pub h: Vec<f64>,
    pub m: Vec<f64>,
}

impl SlstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            c: vec![0.0; hidden],
            n: vec![0.0; hidden],
            h: vec![0.0; hidden],
            m: vec![0.0; hidden],
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.c, &self.n, &self.h, &self.m]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Gate preactivations `(i, f, z, o)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlstmPreacts {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub z: Vec<f64>,
    pub o: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn slstm_cell_update(pre: &SlstmPreacts, state: &SlstmState) -> Result<(Vec<f64>, SlstmState)> {
    let hidden = state.c.len();
    if [&pre.i, &pre.f, &pre.z, &pre.o].iter().any(|v| v.len() != hidden) {
        return Err(Error::Dimension(format!("gate preactivations must have width {hidden}")));
    }
    let mut next = SlstmState::zeros(hidden);
    for u in 0..hidden {
        let m = (pre.f[u] + state.m[u]).max(pre.i[u]);
        let i = (pre.i[u] - m).exp();
        let f = (pre.f[u] + state.m[u] - m).exp();
        next.c[u] = f * state.c[u] + i * pre.z[u].tanh();
        next.n[u] = f * state.n[u] + i;
        next.h[u] = sigmoid(pre.o[u]) * next.c[u] / next.n[u];
        next.m[u] = m;
    }
    if !next.is_finite() {
        return Err(Error::Numeric("sLSTM state became non-finite".into()));
    }
    Ok((next.h.clone(), next))
}

/// Weights of a bare cell: block-diagonal input and recurrent maps per gate
/// `(i, f, z, o)` plus biases.
#[derive(Debug, Clone)]
pub struct SlstmParams {
    pub heads: usize,
    pub input: [Vec<Mat>; 4],
    pub recurrent: [Vec<Mat>; 4],
    pub bias: [Vec<f64>; 4],
}

/// One step where gates `i, f` read `x_if` and gates `z, o` read `x_zo`.
pub fn slstm_step_split(
    x_if: &[f64],
    x_zo: &[f64],
    state: &SlstmState,
    params: &SlstmParams,
) -> Result<(Vec<f64>, SlstmState)> {
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(4);
    for gate in 0..4 {
        let x = if gate < 2 { x_if } else { x_zo };
        let a = block_diagonal_apply(x, &params.input[gate], params.heads)?;
        let r = block_diagonal_apply(&state.h, &params.recurrent[gate], params.heads)?;
        let b = &params.bias[gate];
        if a.len() != r.len() || b.len() != r.len() {
            return Err(Error::Dimension("gate widths disagree".into()));
        }
        pre.push((0..a.len()).map(|u| a[u] + r[u] + b[u]).collect());
    }
    let o = pre.pop().unwrap();
    let z = pre.pop().unwrap();
    let f = pre.pop().unwrap();
    let i = pre.pop().unwrap();
    slstm_cell_update(&SlstmPreacts { i, f, z, o }, state)
}

pub fn slstm_step(x: &[f64], state: &SlstmState, params: &SlstmParams) -> Result<(Vec<f64>, SlstmState)> {
    slstm_step_split(x, x, state, params)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SlstmVars {
    pub c: Var,
    pub n: Var,
    pub h: Var,
    pub m: Var,
}

impl SlstmVars {
    pub fn zeros(g: &mut Graph, batch: usize, hidden: usize) -> Self {
        let z = g.leaf(Mat::zeros((batch, hidden)));
        Self { c: z, n: z, h: z, m: z }
    }
}

/// Tape version of [`slstm_cell_update`]; `pre` is `[i, f, z, o]`.
pub(crate) fn slstm_cell_tape(g: &mut Graph, pre: [Var; 4], st: SlstmVars) -> SlstmVars {
    let [pi, pf, pz, po] = pre;
    let fm = g.add(pf, st.m);
    let m = g.maximum(fm, pi);
    let di = g.sub(pi, m);
    let i = g.exp(di);
    let df = g.sub(fm, m);
    let f = g.exp(df);
    let fc = g.mul(f, st.c);
    let tz = g.tanh(pz);
    let iz = g.mul(i, tz);
    let c = g.add(fc, iz);
    let fnn = g.mul(f, st.n);
    let n = g.add(fnn, i);
    let so = g.sigmoid(po);
    let ratio = g.div(c, n);
    let h = g.mul(so, ratio);
    SlstmVars { c, n, h, m }
}

/// Pre-norm sLSTM block with a gated feed-forward projection and residual add.
#[derive(Debug, Clone)]
pub struct SlstmBlock {
    pub hidden: usize,
    pub heads: usize,
    norm: Norm,
    conv: CausalConv,
    input: [BlockDiagonal; 4],
    recurrent: [BlockDiagonal; 4],
    bias: [ParamId; 4],
    group_norm: Norm,
    up: Linear,
    down: Linear,
    inner: usize,
}

pub const GATE_NAMES: [&str; 4] = ["i", "f", "z", "o"];

impl SlstmBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        heads: usize,
        conv_kernel: usize,
        proj_factor: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let norm = Norm::new(store, &format!("{name}.norm"), hidden, 1, true);
        let conv = CausalConv::new(store, &format!("{name}.conv"), hidden, conv_kernel, rng);
        let mut make = |kind: &str, store: &mut ParamStore| -> Result<[BlockDiagonal; 4]> {
            let v: Vec<BlockDiagonal> = GATE_NAMES
                .iter()
                .map(|gname| BlockDiagonal::new(store, &format!("{name}.{kind}_{gname}"), hidden, hidden, heads, rng))
                .collect::<Result<_>>()?;
            Ok(v.try_into().expect("four gates"))
        };
        let input = make("w", store)?;
        let recurrent = make("r", store)?;
        let bias = GATE_NAMES.map(|gname| {
            let v = if gname == "f" { 1.0 } else { 0.0 };
            store.add_const(format!("{name}.b_{gname}"), 1, hidden, v)
        });
        let group_norm = Norm::new(store, &format!("{name}.group_norm"), hidden, heads, false);
        let inner = (proj_factor * hidden as f64).ceil() as usize;
        let up = Linear::new(store, &format!("{name}.up"), hidden, 2 * inner, false, rng);
        let down = Linear::new(store, &format!("{name}.down"), inner, hidden, false, rng);
        Ok(Self {
            hidden,
            heads,
            norm,
            conv,
            input,
            recurrent,
            bias,
            group_norm,
            up,
            down,
            inner,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, xs: &[Var]) -> Vec<Var> {
        let Some(&first) = xs.first() else { return Vec::new() };
        let batch = g.shape(first).0;
        let normed: Vec<Var> = xs.iter().map(|&x| self.norm.forward(g, p, x)).collect();
        let conv: Vec<Var> = self
            .conv
            .forward(g, p, &normed)
            .into_iter()
            .map(|v| g.silu(v))
            .collect();
        let mut st = SlstmVars::zeros(g, batch, self.hidden);
        let mut out = Vec::with_capacity(xs.len());
        for t in 0..xs.len() {
            let pre: [Var; 4] = std::array::from_fn(|gate| {
                let x = if gate < 2 { conv[t] } else { normed[t] };
                let a = self.input[gate].forward(g, p, x);
                let r = self.recurrent[gate].forward(g, p, st.h);
                let s = g.add(a, r);
                g.add_row(s, p[self.bias[gate]])
            });
            st = slstm_cell_tape(g, pre, st);
            let y = self.group_norm.forward(g, p, st.h);
            let u = self.up.forward(g, p, y);
            let ua = g.slice_cols(u, 0, self.inner);
            let ub = g.slice_cols(u, self.inner, self.inner);
            let sa = g.silu(ua);
            let gated = g.mul(sa, ub);
            let d = self.down.forward(g, p, gated);
            out.push(g.add(xs[t], d));
        }
        out
    }

    /// Cell weights in the form used by [`slstm_step`].
    pub fn cell_params(&self, store: &ParamStore) -> SlstmParams {
        SlstmParams {
            heads: self.heads,
            input: std::array::from_fn(|k| self.input[k].weights(store)),
            recurrent: std::array::from_fn(|k| self.recurrent[k].weights(store)),
            bias: std::array::from_fn(|k| store.get(self.bias[k]).iter().copied().collect()),
        }
    }

    pub fn down_projection(&self) -> ParamId {
        self.down.w
    }
}
