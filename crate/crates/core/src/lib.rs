//! Simulation toolkit for limited-feedback robust precoding in multi-user FDD
//! systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense networks with exact reverse-mode gradients, Adam and a
//!   binary checkpoint format.
//! - [`array`]: URA geometry, 2D-DFT pilot matrix, the `Q` structure transform
//!   and the pilot observation / preprocessing pipeline.
//! - [`channel`]: synthetic clustered URA channels, normalization and dataset
//!   persistence.
//! - [`vqvae`]: the VQ-VAE feedback pipeline (structured-covariance head and
//!   reconstruction baselines), training and MT/BS inference.
//! - [`baseline`]: DFT-codebook feedback with LS and GMM channel estimation.
//! - [`precoding`]: sum-rate, WMMSE, stochastic WMMSE and the Gaussian sampler.
//! - [`harness`]: experiment configuration, constellation evaluation and sweeps.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod baseline;
pub mod channel;
mod codec;
mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod precoding;
pub mod rng;
pub mod vqvae;

pub use array::{Observation, PilotMatrix, QTransform, UraGeometry};
pub use channel::{ChannelDataset, ChannelVector, ClusterModelConfig, Split};
pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
pub use precoding::{ChannelStatistics, PrecoderConfig, PrecoderSet};
pub use vqvae::{FeedbackMessage, Variant, VqvaeModel};
