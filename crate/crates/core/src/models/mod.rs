//! The generator (complex encoder, recurrent bottleneck, complex decoder
//! and mask head around a differentiable STFT) and the conditional
//! spectrally normalized discriminator.

mod discriminator;
mod generator;
mod state;

pub use discriminator::Discriminator;
pub use generator::{Generator, GeneratorOutput};
pub use state::{
    load_discriminator_config, load_generator_config, load_store, save_discriminator_config, save_generator_config,
    save_store,
};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{BatchNormMode, ImagSign};
use crate::masking::MaskMode;
use crate::signal::{StftConfig, SLICE_LEN};

/// Bottleneck recurrent stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum RecurrentKind {
    /// Real LSTM over the concatenated real and imaginary features.
    RealLstm,
    ComplexLstm,
    #[default]
    ComplexBiLstm,
}

impl RecurrentKind {
    pub const ALL: [RecurrentKind; 3] = [
        RecurrentKind::RealLstm,
        RecurrentKind::ComplexLstm,
        RecurrentKind::ComplexBiLstm,
    ];

    pub fn code(self) -> u8 {
        match self {
            RecurrentKind::RealLstm => 0,
            RecurrentKind::ComplexLstm => 1,
            RecurrentKind::ComplexBiLstm => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == c)
    }
}

impl fmt::Display for RecurrentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecurrentKind::RealLstm => "lstm",
            RecurrentKind::ComplexLstm => "clstm",
            RecurrentKind::ComplexBiLstm => "cblstm",
        })
    }
}

impl FromStr for RecurrentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(RecurrentKind::RealLstm),
            "clstm" => Ok(RecurrentKind::ComplexLstm),
            "cblstm" => Ok(RecurrentKind::ComplexBiLstm),
            other => Err(Error::Config(format!(
                "unknown recurrent kind {other:?} (expected lstm, clstm or cblstm)"
            ))),
        }
    }
}

/// Model size preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scale {
    Paper,
    #[default]
    Toy,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Paper => "paper",
            Scale::Toy => "toy",
        })
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "toy" => Ok(Scale::Toy),
            other => Err(Error::Config(format!(
                "unknown scale {other:?} (expected paper or toy)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Output channels of each encoder block; the decoder mirrors them.
    pub encoder_channels: Vec<usize>,
    pub recurrent_kind: RecurrentKind,
    /// Zero removes the recurrent stack and its projection.
    pub recurrent_layers: usize,
    /// Real LSTM width; complex kinds use half of it per part.
    pub recurrent_units: usize,
    pub mask_mode: MaskMode,
    pub stft: StftConfig,
    pub bn_mode: BatchNormMode,
    pub imag_sign: ImagSign,
}

impl GeneratorConfig {
    pub fn paper() -> Self {
        GeneratorConfig {
            encoder_channels: vec![16, 32, 64, 128, 256, 256],
            recurrent_kind: RecurrentKind::ComplexBiLstm,
            recurrent_layers: 2,
            recurrent_units: 256,
            mask_mode: MaskMode::Crm,
            stft: StftConfig::paper(),
            bn_mode: BatchNormMode::Naive,
            imag_sign: ImagSign::Minus,
        }
    }

    pub fn toy() -> Self {
        GeneratorConfig {
            encoder_channels: vec![8, 16, 32],
            recurrent_units: 32,
            stft: StftConfig::toy(),
            ..Self::paper()
        }
    }

    /// Smallest configuration used by the finite-difference suite.
    pub fn gradcheck() -> Self {
        GeneratorConfig {
            encoder_channels: vec![2, 4],
            recurrent_units: 4,
            stft: StftConfig::new(12, 6, 16).expect("gradcheck STFT geometry"),
            ..Self::paper()
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Paper => Self::paper(),
            Scale::Toy => Self::toy(),
        }
    }

    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Frequency bins at the bottleneck.
    pub fn bottleneck_bins(&self) -> usize {
        self.stft.bins() >> self.depth()
    }

    /// Real features per frame and plane at the bottleneck.
    pub fn bottleneck_features(&self) -> usize {
        self.encoder_channels.last().copied().unwrap_or(1) * self.bottleneck_bins()
    }

    /// Hidden size of each real LSTM inside the recurrent stack.
    pub fn lstm_hidden(&self) -> usize {
        match self.recurrent_kind {
            RecurrentKind::RealLstm => self.recurrent_units,
            _ => self.recurrent_units / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::Config(format!(
                "encoder channels must be non-empty and positive, got {:?}",
                self.encoder_channels
            )));
        }
        let bins = self.stft.bins();
        let step = 1usize << self.depth();
        if bins % step != 0 || bins < step {
            return Err(Error::Config(format!(
                "{bins} frequency bins cannot pass {} stride-2 encoder layers",
                self.depth()
            )));
        }
        if self.recurrent_layers > 0 && self.lstm_hidden() == 0 {
            return Err(Error::Config(format!(
                "recurrent width {} too small for {}",
                self.recurrent_units, self.recurrent_kind
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub channels: Vec<usize>,
    pub filter_len: usize,
    pub stride: usize,
    pub leaky_slope: f64,
    /// Waveform length the final dense layer is sized for.
    pub input_len: usize,
}

impl DiscriminatorConfig {
    pub fn paper() -> Self {
        DiscriminatorConfig {
            channels: vec![16, 32, 32, 64, 64, 128, 128, 256, 256, 512, 1024],
            filter_len: 31,
            stride: 2,
            leaky_slope: 0.3,
            input_len: SLICE_LEN,
        }
    }

    pub fn toy() -> Self {
        DiscriminatorConfig {
            channels: vec![2, 4, 4, 8, 8, 16, 16, 32, 32, 64, 128],
            ..Self::paper()
        }
    }

    pub fn gradcheck(input_len: usize) -> Self {
        DiscriminatorConfig {
            channels: vec![2, 3],
            filter_len: 5,
            stride: 2,
            leaky_slope: 0.3,
            input_len,
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Paper => Self::paper(),
            Scale::Toy => Self::toy(),
        }
    }

    /// Length left after the strided convolutions.
    pub fn final_len(&self) -> usize {
        self.channels.iter().fold(self.input_len, |len, _| {
            (len + 2 * (self.filter_len / 2) - self.filter_len) / self.stride + 1
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.stride == 0 || self.filter_len == 0 {
            return Err(Error::Config(format!("invalid discriminator geometry {self:?}")));
        }
        let mut len = self.input_len;
        for _ in &self.channels {
            if len + 2 * (self.filter_len / 2) < self.filter_len {
                return Err(Error::Config(format!(
                    "discriminator input of {} samples is too short",
                    self.input_len
                )));
            }
            len = (len + 2 * (self.filter_len / 2) - self.filter_len) / self.stride + 1;
        }
        Ok(())
    }
}

/// Number of scalar generator parameters for `cfg`.
pub fn count_parameters(cfg: &GeneratorConfig) -> Result<usize> {
    let g = Generator::<f32>::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(g.store.numel())
}

/// Number of scalar discriminator parameters for `cfg`.
pub fn count_discriminator_parameters(cfg: &DiscriminatorConfig) -> Result<usize> {
    let d = Discriminator::<f32>::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(d.store.numel())
}
