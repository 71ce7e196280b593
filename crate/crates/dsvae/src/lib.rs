//! Disentangled sequential VAE for zero-shot voice conversion.
//!
//! The library learns two latents from spectrogram segments: a time-invariant
//! speaker code and a time-varying content code, trained with a two-term KL
//! objective whose `alpha`/`beta` weights balance how much information each
//! latent carries. Swapping the speaker code at decode time performs voice
//! conversion; cosine scoring of pooled latents with an equal-error-rate
//! metric measures how cleanly the two factors separate.

pub mod dsp;
pub mod convert;
pub mod error;
pub mod eval;
pub mod model;
pub mod config;
pub mod threads;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
