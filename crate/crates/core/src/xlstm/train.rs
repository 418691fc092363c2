use std::collections::BTreeMap;

use ndarray::{s, Array2, Array3, Axis};

use super::model::XlstmModel;
use crate::autograd::{Graph, Mat, Var};
use crate::nn::{relative_error, Adam, Bound};
use crate::{Error, Result};

/// Splits aligned `(features [T x D], targets [T x O])` sequences into chunks
/// of `chunk_len` steps and stacks equal-length chunks into batches.
pub fn chunk_sequences(
    sequences: &[(Array2<f64>, Array2<f64>)],
    chunk_len: usize,
) -> Result<Vec<(Array3<f64>, Array3<f64>)>> {
    if chunk_len == 0 {
        return Err(Error::Argument("chunk_len must be positive".into()));
    }
    let mut groups: BTreeMap<usize, (Vec<Array2<f64>>, Vec<Array2<f64>>)> = BTreeMap::new();
    for (x, y) in sequences {
        if x.nrows() != y.nrows() {
            return Err(Error::Dimension(format!(
                "feature sequence has {} steps, targets have {}",
                x.nrows(),
                y.nrows()
            )));
        }
        let mut start = 0;
        while start < x.nrows() {
            let len = chunk_len.min(x.nrows() - start);
            let e = groups.entry(len).or_default();
            e.0.push(x.slice(s![start..start + len, ..]).to_owned());
            e.1.push(y.slice(s![start..start + len, ..]).to_owned());
            start += len;
        }
    }
    let stack = |v: &[Array2<f64>]| {
        let views: Vec<_> = v.iter().map(|a| a.view()).collect();
        ndarray::stack(Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))
    };
    groups
        .values()
        .map(|(xs, ys)| Ok((stack(xs)?, stack(ys)?)))
        .collect()
}

/// Builds the summed squared error over all batches and returns `(sse, count)`.
fn sse_tape(
    model: &XlstmModel,
    g: &mut Graph,
    p: &Bound,
    batches: &[(Array3<f64>, Array3<f64>)],
) -> Result<(Var, usize)> {
    let mut terms = Vec::new();
    let mut count = 0;
    for (x, y) in batches {
        if y.shape()[2] != model.config.output_dim {
            return Err(Error::Dimension(format!(
                "targets have {} outputs, model predicts {}",
                y.shape()[2],
                model.config.output_dim
            )));
        }
        let outs = model.forward_tape(g, p, x)?;
        for (t, o) in outs.into_iter().enumerate() {
            let target = g.leaf(y.index_axis(Axis(1), t).to_owned());
            let d = g.sub(o, target);
            let sq = g.square(d);
            terms.push(g.sum(sq));
            count += y.shape()[0] * y.shape()[2];
        }
    }
    if terms.is_empty() {
        return Err(Error::Argument("no training data".into()));
    }
    let all = g.concat_cols(&terms);
    Ok((g.sum(all), count))
}

/// Root-mean-square error of the model over all chunks.
pub fn rmse_loss(model: &XlstmModel, batches: &[(Array3<f64>, Array3<f64>)]) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let (sse, count) = sse_tape(model, &mut g, &p, batches)?;
    Ok((g.scalar(sse) / count as f64).sqrt())
}

/// Full-batch Adam on the RMSE loss; returns the loss before each of the
/// `train_steps` updates.
pub fn train(model: &mut XlstmModel, sequences: &[(Array2<f64>, Array2<f64>)]) -> Result<Vec<f64>> {
    let batches = chunk_sequences(sequences, model.config.chunk_len)?;
    let mut opt = Adam::new(&model.store, model.config.learning_rate);
    let mut curve = Vec::with_capacity(model.config.train_steps);
    for step in 0..model.config.train_steps {
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let (sse, count) = sse_tape(model, &mut g, &p, &batches)?;
        let mse = g.scale(sse, 1.0 / count as f64);
        let loss = g.sqrt(mse);
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss at step {step}")));
        }
        log::debug!("xlstm step {step}: rmse {value:.6}");
        curve.push(value);
        let grads = g.backward(loss);
        let grads = model.store.grads(&p, &grads);
        opt.step(&mut model.store, &grads);
    }
    Ok(curve)
}

fn mse_value(model: &XlstmModel, x: &Array3<f64>, y: &Array3<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let (sse, count) = sse_tape(model, &mut g, &p, &[(x.clone(), y.clone())])?;
    Ok(g.scalar(sse) / count as f64)
}

/// Largest per-tensor relative error between backprop gradients of the mean
/// squared error and central differences with step `1e-5`.
pub fn grad_check(model: &XlstmModel, x: &Array3<f64>, y: &Array3<f64>) -> Result<f64> {
    const EPS: f64 = 1e-5;
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let (sse, count) = sse_tape(model, &mut g, &p, &[(x.clone(), y.clone())])?;
    let loss = g.scale(sse, 1.0 / count as f64);
    let analytic = model.store.grads(&p, &g.backward(loss));

    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (id, a) in model.store.ids().zip(&analytic) {
        let mut numeric = Mat::zeros(a.dim());
        for (idx, slot) in numeric.indexed_iter_mut() {
            let orig = model.store.get(id)[idx];
            probe.store.get_mut(id)[idx] = orig + EPS;
            let up = mse_value(&probe, x, y)?;
            probe.store.get_mut(id)[idx] = orig - EPS;
            let down = mse_value(&probe, x, y)?;
            probe.store.get_mut(id)[idx] = orig;
            *slot = (up - down) / (2.0 * EPS);
        }
        let err = relative_error(a, &numeric, 1e-6);
        log::trace!("grad check {}: {err:.3e}", model.store.name(id));
        worst = worst.max(err);
    }
    Ok(worst)
}
