use ndarray::Array2;
use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::nn::{Bound, ParamId, ParamStore};
use crate::{Error, Result};

/// Depthwise causal convolution of `x` (`[T x C]`) with `kernel` (`[k x C]`).
///
/// Row `k - 1` of the kernel taps the current sample, row 0 the sample
/// `k - 1` steps back. Missing history is zero padded.
pub fn causal_conv(x: &Array2<f64>, kernel: &Array2<f64>) -> Result<Array2<f64>> {
    let k = kernel.nrows();
    if k == 0 {
        return Err(Error::Argument("kernel size must be at least 1".into()));
    }
    if kernel.ncols() != x.ncols() {
        return Err(Error::Dimension(format!(
            "kernel has {} channels, input has {}",
            kernel.ncols(),
            x.ncols()
        )));
    }
    let (t_len, c) = x.dim();
    let mut y = Array2::zeros((t_len, c));
    for t in 0..t_len {
        for j in 0..k {
            let Some(src) = (t + j + 1).checked_sub(k) else { continue };
            for ch in 0..c {
                y[[t, ch]] += kernel[[j, ch]] * x[[src, ch]];
            }
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy)]
pub struct CausalConv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub kernel_size: usize,
}

impl CausalConv {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, kernel_size: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (kernel_size as f64).sqrt();
        let w = Array2::from_shape_fn((kernel_size, channels), |_| rng.random_range(-bound..bound));
        Self {
            kernel: store.add(format!("{name}.kernel"), w),
            bias: store.add_const(format!("{name}.bias"), 1, channels, 0.0),
            kernel_size,
        }
    }

    /// Applies the convolution over a sequence of `[B x C]` steps.
    pub fn forward(&self, g: &mut Graph, p: &Bound, xs: &[Var]) -> Vec<Var> {
        let k = self.kernel_size;
        let taps: Vec<Var> = (0..k).map(|j| g.slice_rows(p[self.kernel], j, 1)).collect();
        (0..xs.len())
            .map(|t| {
                let mut acc = None;
                for (j, &tap) in taps.iter().enumerate() {
                    let Some(src) = (t + j + 1).checked_sub(k) else { continue };
                    let term = g.mul_row(xs[src], tap);
                    acc = Some(match acc {
                        Some(a) => g.add(a, term),
                        None => term,
                    });
                }
                let acc = acc.expect("the current tap always exists");
                g.add_row(acc, p[self.bias])
            })
            .collect()
    }
}
