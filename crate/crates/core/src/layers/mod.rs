//! Learnable building blocks.
//!
//! Every layer exists in two forms. Tape-level functions take tape handles
//! for the parameters and are what the models use; pure functions take
//! plain tensors and run a throwaway tape, which is what oracle tests call.
//! Layer structs register their tensors in a [`ParamStore`] and resolve them
//! to tape handles through a [`Ctx`].

mod conv;
mod linear;
mod norm;
mod recurrent;
mod spectral;

pub use conv::{
    complex_conv2d, complex_transposed_conv2d, conv1d, encoder_geometry, ComplexConv2d, ComplexConvParams,
    ComplexConvVars, Conv1d,
};
pub use linear::{ComplexLinear, Linear};
pub use norm::{BatchNormMode, ComplexBatchNorm};
pub use recurrent::{
    complex_lstm, real_lstm, ComplexLstm, ComplexLstmParams, ImagSign, LstmLayer, LstmTensors, RealLstm,
};
pub use spectral::{spectral_normalize, SpectralNormState};

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::optim::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Tape handles of the real and imaginary planes of a complex value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

/// What a layer needs while recording a forward pass.
pub struct Ctx<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    pub store: &'a ParamStore<T>,
    /// Whether parameters enter the tape as gradient-receiving leaves.
    pub trainable: bool,
    /// Batch statistics (training) or running statistics (evaluation).
    pub training: bool,
}

impl<T: Real> Ctx<'_, T> {
    pub fn param(&mut self, id: ParamId) -> Var {
        self.store.var(self.tape, id, self.trainable)
    }
}

/// Uniform values in `(-bound, bound)`.
pub(crate) fn uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

/// Complex PReLU: the same per-channel slope on both planes.
pub fn complex_prelu<T: Real>(tape: &mut Tape<T>, x: CVar, alpha: Var) -> CVar {
    CVar {
        re: tape.prelu(x.re, alpha),
        im: tape.prelu(x.im, alpha),
    }
}
