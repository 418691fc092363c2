use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlstm::MlstmBlock;
use super::slstm::SlstmBlock;
use super::{BlockKind, XlstmConfig};
use crate::autograd::{Graph, Var};
use crate::nn::{Bound, Linear, Norm, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub enum Block {
    S(SlstmBlock),
    M(MlstmBlock),
}

#[derive(Debug, Clone)]
pub struct XlstmModel {
    pub config: XlstmConfig,
    pub store: ParamStore,
    embed: Linear,
    blocks: Vec<Block>,
    final_norm: Norm,
    head: Linear,
}

const BLOCK_PREFIX: &str = "block";

impl XlstmModel {
    pub fn new(config: XlstmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let h = config.hidden_size;
        let embed = Linear::new(&mut store, "embed", config.input_dim, h, true, &mut rng);
        let mut blocks = Vec::with_capacity(config.num_layers);
        for (l, kind) in config.block_pattern.iter().enumerate() {
            let name = format!("{BLOCK_PREFIX}{l}");
            blocks.push(match kind {
                BlockKind::Slstm => Block::S(SlstmBlock::new(
                    &mut store,
                    &name,
                    h,
                    config.num_heads,
                    config.conv_kernel,
                    config.slstm_proj_factor,
                    &mut rng,
                )?),
                BlockKind::Mlstm => Block::M(MlstmBlock::new(
                    &mut store,
                    &name,
                    h,
                    config.num_heads,
                    config.conv_kernel,
                    config.mlstm_proj_factor,
                    &mut rng,
                )?),
            });
        }
        let final_norm = Norm::new(&mut store, "final_norm", h, 1, true);
        let head = Linear::new(&mut store, "head", h, config.output_dim, true, &mut rng);
        Ok(Self {
            config,
            store,
            embed,
            blocks,
            final_norm,
            head,
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    fn check_input(&self, batch: &Array3<f64>) -> Result<()> {
        if batch.shape()[2] != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                batch.shape()[2],
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Builds the forward pass for `batch` (`[B x T x D]`); one `[B x O]` var per step.
    pub(crate) fn forward_tape(&self, g: &mut Graph, p: &Bound, batch: &Array3<f64>) -> Result<Vec<Var>> {
        self.check_input(batch)?;
        let mut xs: Vec<Var> = (0..batch.shape()[1])
            .map(|t| {
                let x = g.leaf(batch.index_axis(Axis(1), t).to_owned());
                self.embed.forward(g, p, x)
            })
            .collect();
        for block in &self.blocks {
            xs = match block {
                Block::S(b) => b.forward(g, p, &xs),
                Block::M(b) => b.forward(g, p, &xs),
            };
        }
        Ok(xs
            .into_iter()
            .map(|x| {
                let n = self.final_norm.forward(g, p, x);
                self.head.forward(g, p, n)
            })
            .collect())
    }

    /// `[B x T x input_dim] -> [B x T x output_dim]`.
    pub fn forward(&self, batch: &Array3<f64>) -> Result<Array3<f64>> {
        let (b, t, _) = batch.dim();
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let outs = self.forward_tape(&mut g, &p, batch)?;
        let mut y = Array3::zeros((b, t, self.config.output_dim));
        for (ti, o) in outs.iter().enumerate() {
            y.index_axis_mut(Axis(1), ti).assign(g.value(*o));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("xLSTM forward produced a non-finite output".into()));
        }
        Ok(y)
    }

    /// Runs one `[T x input_dim]` sequence.
    pub fn predict_sequence(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let y = self.forward(&x.clone().insert_axis(Axis(0)))?;
        Ok(y.index_axis_move(Axis(0), 0))
    }

    /// Zeros every parameter inside the recurrent blocks.
    pub fn zero_block_weights(&mut self) {
        let ids: Vec<_> = self
            .store
            .ids()
            .filter(|&id| self.store.name(id).starts_with(BLOCK_PREFIX))
            .collect();
        for id in ids {
            self.store.get_mut(id).fill(0.0);
        }
    }

    /// The embedding, final norm and head applied without any block, on one `[T x D]` sequence.
    pub fn head_only(&self, x: &Array2<f64>) -> Array2<f64> {
        let e = self.embed.apply(&self.store, x);
        let n = self.final_norm.apply(&self.store, &e);
        self.head.apply(&self.store, &n)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.store.save(dir, &serde_json::to_value(&self.config)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (store, config) = ParamStore::load(dir)?;
        let config: XlstmConfig = serde_json::from_value(config)?;
        let mut model = Self::new(config)?;
        model.store.assign(&store)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small(pattern: Vec<BlockKind>, seed: u64) -> XlstmModel {
        XlstmModel::new(XlstmConfig {
            input_dim: 5,
            output_dim: 3,
            hidden_size: 8,
            num_layers: pattern.len(),
            num_heads: 2,
            block_pattern: pattern,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn random_batch(b: usize, t: usize, d: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((b, t, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn default_model_output_shape() {
        let model = XlstmModel::new(XlstmConfig::default()).unwrap();
        let y = model.forward(&Array3::zeros((1, 1, 54))).unwrap();
        assert_eq!(y.dim(), (1, 1, 16));
    }

    #[test]
    fn identical_batch_rows_give_identical_outputs() {
        let model = small(vec![BlockKind::Mlstm, BlockKind::Slstm], 1);
        let one = random_batch(1, 6, 5, 2);
        let two = ndarray::concatenate(Axis(0), &[one.view(), one.view()]).unwrap();
        let y = model.forward(&two).unwrap();
        assert_eq!(y.index_axis(Axis(0), 0), y.index_axis(Axis(0), 1));
    }

    #[test]
    fn stack_is_causal() {
        let model = small(vec![BlockKind::Mlstm, BlockKind::Slstm], 3);
        let x = random_batch(2, 10, 5, 4);
        let base = model.forward(&x).unwrap();
        for t in [0, 4, 9] {
            let mut x2 = x.clone();
            x2[[1, t, 2]] += 3.0;
            let y = model.forward(&x2).unwrap();
            for s in 0..10 {
                let same = y.index_axis(Axis(1), s) == base.index_axis(Axis(1), s);
                assert_eq!(same, s < t, "step {s} after perturbing {t}");
            }
        }
    }

    #[test]
    fn zeroed_blocks_reduce_to_head() {
        let mut model = small(vec![BlockKind::Mlstm, BlockKind::Slstm], 5);
        model.zero_block_weights();
        let x = random_batch(1, 7, 5, 6);
        let y = model.forward(&x).unwrap();
        let expect = model.head_only(&x.index_axis(Axis(0), 0).to_owned());
        assert_eq!(y.index_axis(Axis(0), 0), expect);
    }

    #[test]
    fn wrong_input_width_is_an_error() {
        let model = small(vec![BlockKind::Slstm], 0);
        assert!(matches!(model.forward(&Array3::zeros((1, 2, 4))), Err(Error::Dimension(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = small(vec![BlockKind::Mlstm, BlockKind::Slstm], 7);
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = XlstmModel::load(dir.path()).unwrap();
        let x = random_batch(1, 4, 5, 8);
        assert_eq!(back.forward(&x).unwrap(), model.forward(&x).unwrap());
    }
}
