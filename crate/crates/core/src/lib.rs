//! Complex-valued convolution-recurrent GAN for single-channel speech
//! enhancement.
//!
//! The crate is self-contained: a small reverse-mode differentiation
//! substrate ([`autodiff`]), convolutional STFT front end ([`signal`]),
//! complex layers ([`layers`]), mask application ([`masking`]), the
//! generator/discriminator pair ([`models`]), adversarial training
//! ([`train`]), synthetic data and WAV I/O ([`data`]) and proxy quality
//! metrics ([`metrics`]).

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod masking;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{complex_elementwise_mul, ComplexTensor, Real, RealTensor, Tensor};
