//! Graph masked-autoencoder pre-training and sequence classification for
//! 2-D human pose skeletons.
//!
//! The crate pre-trains an asymmetric graph encoder-decoder to reconstruct
//! masked joint features of COCO-17 skeletons, then reuses the encoder
//! inside a spatial-temporal classifier fine-tuned on labeled sequences.
//! Everything runs on a small built-in autodiff engine with seeded,
//! bit-reproducible training loops.
//!
//! Entry points:
//! - [`numerics`]: tape autodiff, parameter store, optimizers, RNG streams.
//! - [`skeleton`]: the COCO-17 layout, body-part regions, adjacency forms.
//! - [`masking`]: mask strategies and the learnable mask token.
//! - [`backbones`]: GIN / GCN / GAT graph layers and encoder stacks.
//! - [`mae`]: masked-autoencoder model, cosine reconstruction loss,
//!   pre-training loop.
//! - [`classifier`]: downstream sequence classifier and fine-tuning loop.
//! - [`data`]: JSONL ingestion, resampling, normalization, synthetic data.
//! - [`checkpoint`] / [`config`]: binary checkpoints and JSON run configs.
//! - [`commands`]: the operations behind the `skmae` binary.

pub mod backbones;
pub mod checkpoint;
pub mod classifier;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod mae;
pub mod masking;
pub mod numerics;
pub mod skeleton;

pub use error::{Error, Result};
