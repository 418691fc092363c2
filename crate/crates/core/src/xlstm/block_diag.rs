use rand::Rng;

use crate::autograd::{Graph, Mat, Var};
use crate::nn::{Bound, ParamId, ParamStore};
use crate::{Error, Result};

/// Splits `x` into `heads` equal slices and maps slice `i` through `weights[i]`
/// (`[d_in/heads x d_out/heads]`, row-vector convention). Heads never mix.
pub fn block_diagonal_apply(x: &[f64], weights: &[Mat], heads: usize) -> Result<Vec<f64>> {
    if heads == 0 || x.len() % heads != 0 {
        return Err(Error::Dimension(format!(
            "input width {} is not divisible by {heads} heads",
            x.len()
        )));
    }
    if weights.len() != heads {
        return Err(Error::Dimension(format!(
            "{} weight blocks for {heads} heads",
            weights.len()
        )));
    }
    let dh = x.len() / heads;
    let mut out = Vec::new();
    for (xi, w) in x.chunks(dh).zip(weights) {
        if w.nrows() != dh {
            return Err(Error::Dimension(format!(
                "weight block has {} rows, head slice has {dh}",
                w.nrows()
            )));
        }
        for j in 0..w.ncols() {
            out.push(xi.iter().zip(w.column(j)).map(|(a, b)| a * b).sum());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BlockDiagonal {
    pub heads: usize,
    pub blocks: Vec<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl BlockDiagonal {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || d_in % heads != 0 || d_out % heads != 0 {
            return Err(Error::Dimension(format!(
                "block-diagonal {d_in}->{d_out} does not split into {heads} heads"
            )));
        }
        let blocks = (0..heads)
            .map(|h| store.add_uniform(format!("{name}.h{h}"), d_in / heads, d_out / heads, rng))
            .collect();
        Ok(Self {
            heads,
            blocks,
            d_in,
            d_out,
        })
    }

    pub fn num_params(&self) -> usize {
        self.d_in * self.d_out / self.heads
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let dh = self.d_in / self.heads;
        let parts: Vec<Var> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(h, &w)| {
                let xi = g.slice_cols(x, h * dh, dh);
                g.matmul(xi, p[w])
            })
            .collect();
        g.concat_cols(&parts)
    }

    pub fn weights(&self, store: &ParamStore) -> Vec<Mat> {
        self.blocks.iter().map(|&w| store.get(w).clone()).collect()
    }
}
