//! xLSTM regressor from windowed sEMG features to joint angles and torques.
//!
//! The stack is `embed -> [mLSTM | sLSTM blocks] -> norm -> head`. Every
//! block is pre-norm with a residual add, so a block whose weights are all
//! zero is the identity.

mod block_diag;
mod conv;
mod mlstm;
mod model;
mod slstm;
mod train;

pub use block_diag::{block_diagonal_apply, BlockDiagonal};
pub use conv::{causal_conv, CausalConv};
pub use mlstm::{mlstm_cell_update, mlstm_step, mlstm_step_split, MlstmBlock, MlstmParams, MlstmState};
pub use model::{Block, XlstmModel};
pub use slstm::{
    slstm_cell_update, slstm_step, slstm_step_split, SlstmBlock, SlstmParams, SlstmPreacts, SlstmState,
};
pub use train::{chunk_sequences, grad_check, rmse_loss, train};

use serde::{Deserialize, Serialize};

use crate::features::{NUM_FEATURES, NUM_OUTPUTS};
use crate::ingest::SEMG_CHANNELS;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    #[serde(rename = "s")]
    Slstm,
    #[serde(rename = "m")]
    Mlstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XlstmConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub conv_kernel: usize,
    pub block_pattern: Vec<BlockKind>,
    pub slstm_proj_factor: f64,
    pub mlstm_proj_factor: f64,
    pub learning_rate: f64,
    pub train_steps: usize,
    /// Windows per training subsequence.
    pub chunk_len: usize,
    pub seed: u64,
}

impl Default for XlstmConfig {
    fn default() -> Self {
        Self {
            input_dim: SEMG_CHANNELS * NUM_FEATURES,
            output_dim: NUM_OUTPUTS,
            hidden_size: 32,
            num_layers: 2,
            num_heads: 4,
            conv_kernel: 4,
            block_pattern: vec![BlockKind::Mlstm, BlockKind::Slstm],
            slstm_proj_factor: 4.0 / 3.0,
            mlstm_proj_factor: 2.0,
            learning_rate: 0.01,
            train_steps: 20,
            chunk_len: 64,
            seed: 0,
        }
    }
}

impl XlstmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("conv_kernel", self.conv_kernel),
            ("train_steps", self.train_steps),
            ("chunk_len", self.chunk_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("xlstm.{name} must be positive")));
            }
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.block_pattern.len() != self.num_layers {
            return Err(Error::Config(format!(
                "block_pattern has {} entries for {} layers",
                self.block_pattern.len(),
                self.num_layers
            )));
        }
        if !(self.slstm_proj_factor > 0.0 && self.mlstm_proj_factor > 0.0) {
            return Err(Error::Config("projection factors must be positive".into()));
        }
        let inner = (self.mlstm_proj_factor * self.hidden_size as f64).round() as usize;
        if self.block_pattern.contains(&BlockKind::Mlstm) && (inner == 0 || inner % self.num_heads != 0) {
            return Err(Error::Config(format!(
                "mLSTM inner width {inner} is not divisible by num_heads {}",
                self.num_heads
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}
