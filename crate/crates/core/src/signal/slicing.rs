//! Fixed-length slicing of utterances with 50% overlap and the matching
//! overlap-add reconstruction.

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Slice length in samples (one second at 16 kHz).
pub const SLICE_LEN: usize = 16000;
/// Distance between slice starts.
pub const SLICE_HOP: usize = SLICE_LEN / 2;

/// Slices of one utterance plus what is needed to undo the slicing.
#[derive(Clone, Debug, PartialEq)]
pub struct Slices<T> {
    pub slices: Vec<Vec<T>>,
    /// Zeros appended to the last slice.
    pub pad: usize,
    pub original_len: usize,
}

/// Number of slices covering `len` samples.
pub fn slice_count(len: usize) -> usize {
    if len <= SLICE_LEN {
        1
    } else {
        (len - SLICE_LEN).div_ceil(SLICE_HOP) + 1
    }
}

/// Cuts `x` into [`SLICE_LEN`]-sample slices starting every [`SLICE_HOP`]
/// samples; the last slice is zero-padded.
pub fn slice_utterance<T: Real>(x: &[T]) -> Slices<T> {
    let n = slice_count(x.len());
    let slices = (0..n)
        .map(|i| {
            let start = i * SLICE_HOP;
            let end = (start + SLICE_LEN).min(x.len());
            let mut s = x[start..end].to_vec();
            s.resize(SLICE_LEN, T::zero());
            s
        })
        .collect();
    let covered = (n - 1) * SLICE_HOP + SLICE_LEN;
    Slices {
        slices,
        pad: covered - x.len(),
        original_len: x.len(),
    }
}

/// Overlap-adds slices back into a waveform of `original_len` samples,
/// halving the regions covered twice.
pub fn reconstruct_utterance<T: Real>(slices: &[Vec<T>], original_len: usize) -> Result<Vec<T>> {
    let expected = slice_count(original_len);
    if original_len == 0 || slices.len() != expected {
        return Err(Error::Geometry(format!(
            "{} slices cannot rebuild {original_len} samples (expected {expected})",
            slices.len()
        )));
    }
    if let Some(bad) = slices.iter().find(|s| s.len() != SLICE_LEN) {
        return Err(Error::Geometry(format!(
            "slice of {} samples, expected {SLICE_LEN}",
            bad.len()
        )));
    }
    let covered = (expected - 1) * SLICE_HOP + SLICE_LEN;
    let mut sum = vec![T::zero(); covered];
    let mut count = vec![0u8; covered];
    for (i, s) in slices.iter().enumerate() {
        let start = i * SLICE_HOP;
        for (j, &v) in s.iter().enumerate() {
            sum[start + j] += v;
            count[start + j] += 1;
        }
    }
    let two = T::one() + T::one();
    sum.truncate(original_len);
    for (v, &c) in sum.iter_mut().zip(&count) {
        if c == 2 {
            *v /= two;
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::testing::random;

    #[test]
    fn one_full_slice() {
        let s = slice_utterance(&vec![1.0f64; 16000]);
        assert_eq!(s.slices.len(), 1);
        assert_eq!(s.pad, 0);
    }

    #[test]
    fn two_slices_for_one_and_a_half_seconds() {
        let x: Vec<f64> = (0..24000).map(|i| i as f64).collect();
        let s = slice_utterance(&x);
        assert_eq!(s.slices.len(), 2);
        assert_eq!(s.slices[1][0], 8000.0);
        assert_eq!(s.pad, 0);
    }

    #[test]
    fn short_input_is_padded() {
        let s = slice_utterance(&vec![1.0f64; 4000]);
        assert_eq!(s.slices.len(), 1);
        assert_eq!(s.pad, 12000);
        assert_eq!(s.slices[0][3999], 1.0);
        assert_eq!(s.slices[0][4000], 0.0);
    }

    #[test]
    fn constant_slices_average_to_constant() {
        let y = reconstruct_utterance(&[vec![1.0f64; 16000], vec![1.0; 16000]], 24000).unwrap();
        assert!(y.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn wrong_slice_count_is_a_geometry_error() {
        let err = reconstruct_utterance(&[vec![0.0f64; 16000]], 40000).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn round_trip_is_exact_over_many_lengths() {
        let x = random(11, &[50000]).into_data();
        for len in (1..=50000).step_by(97).chain([40000, 50000]) {
            let s = slice_utterance(&x[..len]);
            let y = reconstruct_utterance(&s.slices, len).unwrap();
            assert_eq!(y, x[..len]);
        }
    }
}
