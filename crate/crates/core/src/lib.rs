//! Desk-scale toolkit for mapping surface EMG to lower-limb joint kinematics.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`ingest`] - canonical record format, univariate decoupling, synthetic gait data
//! * [`preprocess`] - baseline correction, wavelet packet denoising, Butterworth filtering,
//!   max-abs normalization
//! * [`features`] - overlapping windows, six per-channel features, standardization
//! * [`gpr`] - exact RBF Gaussian process regression baseline
//! * [`xlstm`] - sLSTM/mLSTM sequence regressor with hand-written backpropagation
//! * [`forecast`] - lag-feature decoder-only probabilistic forecaster and CRPS scoring
//! * [`pipeline`] - record-to-tensor driver chaining the stages above
//!
//! [`autograd`] and [`nn`] hold the small reverse-mode engine and parameter
//! plumbing shared by the two neural models.

pub mod autograd;
pub mod error;
pub mod features;
pub mod forecast;
pub mod gpr;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod tensor_io;
pub mod xlstm;

pub use error::{Error, Result};
