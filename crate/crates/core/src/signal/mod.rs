//! Convolutional STFT front end and utterance slicing.

mod slicing;
mod stft;

pub use slicing::{reconstruct_utterance, slice_count, slice_utterance, Slices, SLICE_HOP, SLICE_LEN};
pub use stft::{istft, stft, StftConfig, StftPlan};

use crate::error::Result;
use crate::tensor::{ComplexTensor, Real};

/// Spectra of a noisy utterance and optionally its clean reference.
#[derive(Clone, Debug)]
pub struct SpectrogramPair<T> {
    pub noisy: ComplexTensor<T>,
    pub clean: Option<ComplexTensor<T>>,
    pub config: StftConfig,
    pub original_len: usize,
}

impl<T: Real> SpectrogramPair<T> {
    pub fn new(noisy: &[T], clean: Option<&[T]>, config: &StftConfig) -> Result<Self> {
        let plan = StftPlan::new(config);
        let clean = match clean {
            Some(c) => {
                if c.len() != noisy.len() {
                    return Err(crate::Error::dims("spectrogram pair", &[noisy.len()], &[c.len()]));
                }
                Some(plan.forward(c)?)
            }
            None => None,
        };
        Ok(SpectrogramPair {
            noisy: plan.forward(noisy)?,
            clean,
            config: config.clone(),
            original_len: noisy.len(),
        })
    }

    pub fn bins(&self) -> usize {
        self.noisy.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.noisy.shape()[1]
    }
}
