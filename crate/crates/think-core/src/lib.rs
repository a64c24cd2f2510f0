//! Teamwork-generation dialogue model.
//!
//! A response of `N` tokens is produced by a pool of `N` independent
//! single-token generators. Generator `i` sees the context followed by every
//! token emitted so far and reduces that embedded sequence to a fixed-length
//! feature vector with a multi-head *discretely-deformable convolution*: a
//! learned translation matrix picks, for every position, one source row of the
//! input (hard one-hot selection trained with a straight-through estimator)
//! before a final convolution. An MLP maps the features to vocabulary logits.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core can be embedded
//! anywhere; file formats, checkpoints and the command line live in the `think`
//! crate.
//!
//! Modules:
//! - [`corpus`]: tokenization, vocabularies, fixed-length encoding, n-gram sets.
//! - [`deform`]: the deformable convolution and the multi-head semantics extractor.
//! - [`model`]: generator pool, control-center decoding, teacher forcing, loss.
//! - [`optim`] and [`train`]: Adam, warmup schedule, the training loop.
//! - [`metrics`]: distinct-n, q_phrase-n, BLEU, embedding metrics, coherence, mix_coh.
//! - [`probe`]: topic-classification probe built on the semantics extractor.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod corpus;
pub mod deform;
mod error;
pub mod params;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod probe;
mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use params::{ParamRef, Params};
pub use scalar::Scalar;
