//! Tape-based reverse-mode differentiation over 2-D `f64` matrices.
//!
//! Every op records its inputs on the tape and has a hand-written backward
//! rule below. The op set is exactly what the xLSTM and forecaster networks
//! need; batch rows are carried through every op so per-row ops (outer
//! products, mat-vec with flattened matrices, Student-t likelihood) work on
//! whole batches.

use ndarray::{s, Array2, Axis, Zip};
use statrs::function::gamma::{digamma, ln_gamma};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Silu(Var),
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    Maximum(Var, Var),
    MaxScalar(Var, f64),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    RowNorm { x: Var, groups: usize, inv_std: Mat },
    CausalSoftmax(Var, f64),
    RowOuter(Var, Var),
    RowMatVec(Var, Var),
    RowDot(Var, Var),
    StudentTNll { nu: Var, mu: Var, sigma: Var, y: Mat },
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads(Vec<Option<Mat>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` if `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Normalize each row (or each of `groups` equal column groups in a row) to
/// zero mean and unit variance.
pub fn row_norm(x: &Mat, groups: usize, eps: f64) -> (Mat, Mat) {
    let (m, n) = x.dim();
    let gsize = n / groups;
    let mut out = x.clone();
    let mut inv_std = Mat::zeros((m, groups));
    for r in 0..m {
        for g in 0..groups {
            let mut seg = out.slice_mut(s![r, g * gsize..(g + 1) * gsize]);
            let mean = seg.sum() / gsize as f64;
            let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / gsize as f64;
            let is = 1.0 / (var + eps).sqrt();
            seg.mapv_inplace(|v| (v - mean) * is);
            inv_std[[r, g]] = is;
        }
    }
    (out, inv_std)
}

pub fn student_t_nll(nu: f64, mu: f64, sigma: f64, y: f64) -> f64 {
    let z = (y - mu) / sigma;
    -ln_gamma((nu + 1.0) / 2.0) + ln_gamma(nu / 2.0) + 0.5 * (nu * std::f64::consts::PI).ln()
        + sigma.ln()
        + (nu + 1.0) / 2.0 * (z * z / nu).ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        self.push(v, Op::Div(a, b))
    }

    /// `a [m x n] + row [1 x n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    /// `a [m x n] + col [m x 1]` broadcast over columns.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let v = self.value(a) + self.value(col);
        self.push(v, Op::AddCol(a, col))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let v = self.value(a) * self.value(col);
        self.push(v, Op::MulCol(a, col))
    }

    pub fn div_col(&mut self, a: Var, col: Var) -> Var {
        let v = self.value(a) / self.value(col);
        self.push(v, Op::DivCol(a, col))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.push(v, Op::AddScalar(a))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).mapv(f);
        self.push(v, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Elementwise max; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        Zip::from(&mut v).and(self.value(b)).for_each(|x, &y| *x = x.max(y));
        self.push(v, Op::Maximum(a, b))
    }

    pub fn max_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x.max(k), Op::MaxScalar(a, k))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().as_standard_layout().into_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Per-row (per column group) standardization without affine parameters.
    pub fn row_norm(&mut self, x: Var, groups: usize, eps: f64) -> Var {
        assert_eq!(self.shape(x).1 % groups, 0, "columns must split into groups");
        let (v, inv_std) = row_norm(self.value(x), groups, eps);
        self.push(v, Op::RowNorm { x, groups, inv_std })
    }

    /// Row-wise softmax of `scale * x` over columns `j <= i` (square input).
    pub fn causal_softmax(&mut self, x: Var, scale: f64) -> Var {
        let xv = self.value(x);
        let (m, n) = xv.dim();
        assert_eq!(m, n, "causal softmax expects a square score matrix");
        let mut v = Mat::zeros((m, n));
        for i in 0..m {
            let row = xv.row(i);
            let mx = row.iter().take(i + 1).fold(f64::NEG_INFINITY, |a, &b| a.max(scale * b));
            let mut z = 0.0;
            for j in 0..=i {
                let e = (scale * row[j] - mx).exp();
                v[[i, j]] = e;
                z += e;
            }
            for j in 0..=i {
                v[[i, j]] /= z;
            }
        }
        self.push(v, Op::CausalSoftmax(x, scale))
    }

    /// Per row: flattened outer product `a[b, i] * c[b, j]` at column `i * dc + j`.
    pub fn row_outer(&mut self, a: Var, c: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(c));
        let (m, da) = av.dim();
        let dc = cv.ncols();
        let mut v = Mat::zeros((m, da * dc));
        for b in 0..m {
            for i in 0..da {
                for j in 0..dc {
                    v[[b, i * dc + j]] = av[[b, i]] * cv[[b, j]];
                }
            }
        }
        self.push(v, Op::RowOuter(a, c))
    }

    /// Per row: the flattened `[d_out x d_in]` matrix in `mat` times vector `q`.
    pub fn row_matvec(&mut self, mat: Var, q: Var) -> Var {
        let (cv, qv) = (self.value(mat), self.value(q));
        let (m, dq) = qv.dim();
        let dout = cv.ncols() / dq;
        let mut v = Mat::zeros((m, dout));
        for b in 0..m {
            for i in 0..dout {
                v[[b, i]] = (0..dq).map(|j| cv[[b, i * dq + j]] * qv[[b, j]]).sum();
            }
        }
        self.push(v, Op::RowMatVec(mat, q))
    }

    pub fn row_dot(&mut self, a: Var, c: Var) -> Var {
        let v = (self.value(a) * self.value(c)).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowDot(a, c))
    }

    /// Per-row Student-t negative log-likelihood of constant targets `y [m x 1]`.
    pub fn student_t_nll(&mut self, nu: Var, mu: Var, sigma: Var, y: Mat) -> Var {
        let m = y.nrows();
        let v = Mat::from_shape_fn((m, 1), |(r, _)| {
            student_t_nll(
                self.value(nu)[[r, 0]],
                self.value(mu)[[r, 0]],
                self.value(sigma)[[r, 0]],
                y[[r, 0]],
            )
        });
        self.push(v, Op::StudentTNll { nu, mu, sigma, y })
    }

    /// Reverse sweep from `out`, seeded with ones.
    pub fn backward(&self, out: Var) -> Grads {
        let mut grads: Vec<Option<Mat>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Mat::ones(self.value(out).raw_dim()));
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let y = &node.value;
            let val = |v: Var| &self.nodes[v.0].value;
            let mut acc = |v: Var, d: Mat| match &mut grads[v.0] {
                Some(e) => *e += &d,
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&val(*b).t()));
                    acc(*b, val(*a).t().dot(&g));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g);
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * val(*b));
                    acc(*b, &g * val(*a));
                }
                Op::Div(a, b) => {
                    let bv = val(*b);
                    acc(*b, -(&g * y) / bv);
                    acc(*a, g / bv);
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::MulRow(a, row) => {
                    acc(*row, (&g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g * val(*row));
                }
                Op::AddCol(a, col) => {
                    acc(*col, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    acc(*a, g);
                }
                Op::MulCol(a, col) => {
                    acc(*col, (&g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
                    acc(*a, g * val(*col));
                }
                Op::DivCol(a, col) => {
                    let c = val(*col);
                    let dc = -(&g * y).sum_axis(Axis(1)).insert_axis(Axis(1)) / c;
                    acc(*col, dc);
                    acc(*a, g / c);
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::AddScalar(a) => acc(*a, g),
                Op::Tanh(a) => acc(*a, g * &y.mapv(|t| 1.0 - t * t)),
                Op::Sigmoid(a) => acc(*a, g * &y.mapv(|s| s * (1.0 - s))),
                Op::Exp(a) => acc(*a, g * y),
                Op::Ln(a) => acc(*a, g / val(*a)),
                Op::Softplus(a) => acc(*a, g * &val(*a).mapv(sigmoid)),
                Op::Silu(a) => acc(
                    *a,
                    g * &val(*a).mapv(|x| {
                        let s = sigmoid(x);
                        s * (1.0 + x * (1.0 - s))
                    }),
                ),
                Op::Sqrt(a) => acc(*a, g / &(y * 2.0)),
                Op::Square(a) => acc(*a, g * &(val(*a) * 2.0)),
                Op::Abs(a) => acc(*a, g * &val(*a).mapv(f64::signum)),
                Op::Maximum(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let mut ga = g.clone();
                    let mut gb = g;
                    Zip::from(&mut ga).and(&mut gb).and(av).and(bv).for_each(|ga, gb, &x, &z| {
                        if x >= z {
                            *gb = 0.0;
                        } else {
                            *ga = 0.0;
                        }
                    });
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::MaxScalar(a, k) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|ga, &x| {
                        if x < *k {
                            *ga = 0.0;
                        }
                    });
                    acc(*a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Mat::zeros(val(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        acc(*p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut d = Mat::zeros(val(*a).raw_dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(*a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = val(*p).nrows();
                        acc(*p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::Transpose(a) => acc(*a, g.t().as_standard_layout().into_owned()),
                Op::Sum(a) => acc(*a, Mat::from_elem(val(*a).raw_dim(), g[[0, 0]])),
                Op::Mean(a) => {
                    let n = val(*a).len() as f64;
                    acc(*a, Mat::from_elem(val(*a).raw_dim(), g[[0, 0]] / n));
                }
                Op::RowNorm { x, groups, inv_std } => {
                    let (m, n) = y.dim();
                    let gs = n / groups;
                    let mut d = Mat::zeros((m, n));
                    for r in 0..m {
                        for grp in 0..*groups {
                            let cols = grp * gs..(grp + 1) * gs;
                            let gseg = g.slice(s![r, cols.clone()]);
                            let yseg = y.slice(s![r, cols.clone()]);
                            let mg = gseg.sum() / gs as f64;
                            let mgy = gseg.iter().zip(yseg.iter()).map(|(a, b)| a * b).sum::<f64>() / gs as f64;
                            let is = inv_std[[r, grp]];
                            for (k, c) in cols.enumerate() {
                                d[[r, c]] = is * (gseg[k] - mg - yseg[k] * mgy);
                            }
                        }
                    }
                    acc(*x, d);
                }
                Op::CausalSoftmax(x, scale) => {
                    let (m, n) = y.dim();
                    let mut d = Mat::zeros((m, n));
                    for i in 0..m {
                        let dot: f64 = (0..=i).map(|j| g[[i, j]] * y[[i, j]]).sum();
                        for j in 0..=i {
                            d[[i, j]] = scale * y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    acc(*x, d);
                }
                Op::RowOuter(a, c) => {
                    let (av, cv) = (val(*a), val(*c));
                    let (m, da) = av.dim();
                    let dc = cv.ncols();
                    let mut ga = Mat::zeros((m, da));
                    let mut gc = Mat::zeros((m, dc));
                    for b in 0..m {
                        for i in 0..da {
                            for j in 0..dc {
                                let gij = g[[b, i * dc + j]];
                                ga[[b, i]] += gij * cv[[b, j]];
                                gc[[b, j]] += gij * av[[b, i]];
                            }
                        }
                    }
                    acc(*a, ga);
                    acc(*c, gc);
                }
                Op::RowMatVec(mat, q) => {
                    let (cv, qv) = (val(*mat), val(*q));
                    let (m, dq) = qv.dim();
                    let dout = cv.ncols() / dq;
                    let mut gm = Mat::zeros(cv.raw_dim());
                    let mut gq = Mat::zeros((m, dq));
                    for b in 0..m {
                        for i in 0..dout {
                            let gi = g[[b, i]];
                            for j in 0..dq {
                                gm[[b, i * dq + j]] = gi * qv[[b, j]];
                                gq[[b, j]] += gi * cv[[b, i * dq + j]];
                            }
                        }
                    }
                    acc(*mat, gm);
                    acc(*q, gq);
                }
                Op::RowDot(a, c) => {
                    acc(*a, val(*c) * &g);
                    acc(*c, val(*a) * &g);
                }
                Op::StudentTNll { nu, mu, sigma, y: target } => {
                    let m = target.nrows();
                    let mut gn = Mat::zeros((m, 1));
                    let mut gm = Mat::zeros((m, 1));
                    let mut gs = Mat::zeros((m, 1));
                    for r in 0..m {
                        let (n, u, sg) = (val(*nu)[[r, 0]], val(*mu)[[r, 0]], val(*sigma)[[r, 0]]);
                        let z = (target[[r, 0]] - u) / sg;
                        let z2 = z * z;
                        let gr = g[[r, 0]];
                        gm[[r, 0]] = gr * (-(n + 1.0) * z / (sg * (n + z2)));
                        gs[[r, 0]] = gr * (1.0 / sg - (n + 1.0) * z2 / (sg * (n + z2)));
                        gn[[r, 0]] = gr
                            * (-0.5 * digamma((n + 1.0) / 2.0) + 0.5 * digamma(n / 2.0)
                                + 0.5 / n
                                + 0.5 * (z2 / n).ln_1p()
                                - (n + 1.0) * z2 / (2.0 * n * (n + z2)));
                    }
                    acc(*nu, gn);
                    acc(*mu, gm);
                    acc(*sigma, gs);
                }
            }
        }
        Grads(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_mat(rng: &mut impl Rng, m: usize, n: usize, lo: f64, hi: f64) -> Mat {
        Mat::from_shape_fn((m, n), |_| rng.random_range(lo..hi))
    }

    /// Checks d(sum(w * f(inputs)))/d(inputs) against central differences.
    fn check(inputs: Vec<Mat>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.leaf(m.clone())).collect();
        let out = f(&mut g, &vars);
        let w = rand_mat(&mut rng, g.shape(out).0, g.shape(out).1, -1.0, 1.0);
        let wv = g.leaf(w.clone());
        let prod = g.mul(out, wv);
        let loss = g.sum(prod);
        let grads = g.backward(loss);

        let eval = |ins: &[Mat]| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|m| g.leaf(m.clone())).collect();
            let out = f(&mut g, &vars);
            (g.value(out) * &w).sum()
        };
        let eps = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[k], input.dim());
            for idx in 0..input.len() {
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[k].as_slice_mut().unwrap()[idx] += eps;
                minus[k].as_slice_mut().unwrap()[idx] -= eps;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let a = analytic.as_slice().unwrap()[idx];
                assert!(
                    (a - fd).abs() <= 1e-6 * (1.0 + a.abs().max(fd.abs())),
                    "input {k} entry {idx}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn binary_ops() {
        let mut r = rng();
        let a = rand_mat(&mut r, 3, 4, -1.0, 1.0);
        let b = rand_mat(&mut r, 3, 4, 0.5, 2.0);
        check(vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
        check(vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
        check(vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]));
        check(vec![a.clone(), b.clone()], |g, v| g.div(v[0], v[1]));
        check(vec![a.clone(), b.clone()], |g, v| g.maximum(v[0], v[1]));
        check(vec![a, rand_mat(&mut r, 4, 2, -1.0, 1.0)], |g, v| g.matmul(v[0], v[1]));
    }

    #[test]
    fn broadcast_ops() {
        let mut r = rng();
        let a = rand_mat(&mut r, 3, 4, -1.0, 1.0);
        let row = rand_mat(&mut r, 1, 4, -1.0, 1.0);
        let col = rand_mat(&mut r, 3, 1, 0.5, 1.5);
        check(vec![a.clone(), row.clone()], |g, v| g.add_row(v[0], v[1]));
        check(vec![a.clone(), row], |g, v| g.mul_row(v[0], v[1]));
        check(vec![a.clone(), col.clone()], |g, v| g.add_col(v[0], v[1]));
        check(vec![a.clone(), col.clone()], |g, v| g.mul_col(v[0], v[1]));
        check(vec![a, col], |g, v| g.div_col(v[0], v[1]));
    }

    #[test]
    fn unary_ops() {
        let mut r = rng();
        let a = rand_mat(&mut r, 2, 5, -2.0, 2.0);
        let pos = rand_mat(&mut r, 2, 5, 0.3, 2.0);
        check(vec![a.clone()], |g, v| g.tanh(v[0]));
        check(vec![a.clone()], |g, v| g.sigmoid(v[0]));
        check(vec![a.clone()], |g, v| g.exp(v[0]));
        check(vec![a.clone()], |g, v| g.softplus(v[0]));
        check(vec![a.clone()], |g, v| g.silu(v[0]));
        check(vec![a.clone()], |g, v| g.square(v[0]));
        check(vec![a.clone()], |g, v| g.abs(v[0]));
        check(vec![a.clone()], |g, v| g.scale(v[0], -1.7));
        check(vec![a.clone()], |g, v| g.add_scalar(v[0], 0.3));
        check(vec![a.clone()], |g, v| g.max_scalar(v[0], 0.1));
        check(vec![pos.clone()], |g, v| g.ln(v[0]));
        check(vec![pos], |g, v| g.sqrt(v[0]));
        check(vec![a.clone()], |g, v| g.transpose(v[0]));
        check(vec![a.clone()], |g, v| g.sum(v[0]));
        check(vec![a], |g, v| g.mean(v[0]));
    }

    #[test]
    fn structural_ops() {
        let mut r = rng();
        let a = rand_mat(&mut r, 3, 6, -1.0, 1.0);
        let b = rand_mat(&mut r, 3, 2, -1.0, 1.0);
        check(vec![a.clone()], |g, v| g.slice_cols(v[0], 1, 3));
        check(vec![a.clone()], |g, v| g.slice_rows(v[0], 1, 2));
        check(vec![a.clone(), b], |g, v| g.concat_cols(&[v[1], v[0], v[1]]));
        check(vec![a.clone(), rand_mat(&mut r, 1, 6, -1.0, 1.0)], |g, v| {
            g.concat_rows(&[v[0], v[1]])
        });
        check(vec![a.clone()], |g, v| g.row_norm(v[0], 1, 1e-5));
        check(vec![a], |g, v| g.row_norm(v[0], 3, 1e-5));
    }

    #[test]
    fn attention_and_row_ops() {
        let mut r = rng();
        check(vec![rand_mat(&mut r, 5, 5, -2.0, 2.0)], |g, v| g.causal_softmax(v[0], 0.7));
        let a = rand_mat(&mut r, 3, 2, -1.0, 1.0);
        let c = rand_mat(&mut r, 3, 4, -1.0, 1.0);
        check(vec![a.clone(), c.clone()], |g, v| g.row_outer(v[0], v[1]));
        let m = rand_mat(&mut r, 3, 8, -1.0, 1.0);
        check(vec![m, c.clone()], |g, v| g.row_matvec(v[0], v[1]));
        check(vec![c.clone(), c.mapv(|x| x * 0.5 + 0.1)], |g, v| g.row_dot(v[0], v[1]));
    }

    #[test]
    fn student_t_gradients() {
        let mut r = rng();
        let nu = rand_mat(&mut r, 4, 1, 2.5, 12.0);
        let mu = rand_mat(&mut r, 4, 1, -1.0, 1.0);
        let sigma = rand_mat(&mut r, 4, 1, 0.3, 2.0);
        let y = rand_mat(&mut r, 4, 1, -2.0, 2.0);
        check(vec![nu, mu, sigma], move |g, v| g.student_t_nll(v[0], v[1], v[2], y.clone()));
    }

    #[test]
    fn student_t_nll_approaches_gaussian() {
        let nll = student_t_nll(1e7, 0.0, 1.0, 0.5);
        let gauss = 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.125;
        assert!((nll - gauss).abs() < 1e-6);
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::new();
        let x = g.leaf(Mat::from_shape_fn((4, 4), |(i, j)| (i * 4 + j) as f64));
        let y = g.causal_softmax(x, 1.0);
        let v = g.value(y);
        for i in 0..4 {
            assert!((v.row(i).sum() - 1.0).abs() < 1e-12);
            for j in i + 1..4 {
                assert_eq!(v[[i, j]], 0.0);
            }
        }
    }
}
