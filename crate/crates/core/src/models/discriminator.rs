use rand::Rng;

use super::DiscriminatorConfig;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{Conv1d, Ctx, Linear, SpectralNormState};
use crate::optim::ParamStore;
use crate::tensor::{Real, Tensor};

/// Conditional discriminator scoring `(candidate, noisy)` waveform pairs.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub store: ParamStore<T>,
    convs: Vec<Conv1d<T>>,
    squeeze: Conv1d<T>,
    dense: Linear,
    dense_sn: SpectralNormState<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut convs = Vec::with_capacity(config.channels.len());
        let mut input = 2;
        for (l, &out) in config.channels.iter().enumerate() {
            convs.push(Conv1d::new(
                &mut store,
                &format!("conv{l}"),
                input,
                out,
                config.filter_len,
                config.stride,
                true,
                rng,
            ));
            input = out;
        }
        let squeeze = Conv1d::new(&mut store, "squeeze", input, 1, 1, 1, true, rng);
        let dense = Linear::new(&mut store, "dense", config.final_len(), 1, rng);
        let dense_sn = SpectralNormState::new(1, config.final_len(), 1, rng);
        let mut d = Discriminator {
            config,
            store,
            convs,
            squeeze,
            dense,
            dense_sn,
        };
        d.update_sn();
        Ok(d)
    }

    /// One round of power iteration for every normalized weight.
    pub fn update_sn(&mut self) {
        for c in self.convs.iter_mut().chain(std::iter::once(&mut self.squeeze)) {
            c.update_sn(&self.store);
        }
        let w = self.store.value(self.dense.weight_id());
        self.dense_sn.power_iterate(w);
    }

    /// Power-iteration states with stable names.
    pub fn sn_states(&self) -> Vec<(String, &SpectralNormState<T>)> {
        let mut out: Vec<(String, &SpectralNormState<T>)> = self
            .convs
            .iter()
            .enumerate()
            .map(|(l, c)| (format!("conv{l}"), c.sn.as_ref().unwrap()))
            .collect();
        out.push(("squeeze".into(), self.squeeze.sn.as_ref().unwrap()));
        out.push(("dense".into(), &self.dense_sn));
        out
    }

    pub fn sn_states_mut(&mut self) -> Vec<(String, &mut SpectralNormState<T>)> {
        let mut out: Vec<(String, &mut SpectralNormState<T>)> = self
            .convs
            .iter_mut()
            .enumerate()
            .map(|(l, c)| (format!("conv{l}"), c.sn.as_mut().unwrap()))
            .collect();
        out.push(("squeeze".into(), self.squeeze.sn.as_mut().unwrap()));
        out.push(("dense".into(), &mut self.dense_sn));
        out
    }

    /// Scores `[B, 1]` for candidate and condition waveforms `[B, L]`.
    pub fn forward(&self, tape: &mut Tape<T>, candidate: Var, condition: Var, trainable: bool) -> Result<Var> {
        let (cs, xs) = (tape.shape(candidate).to_vec(), tape.shape(condition).to_vec());
        if cs != xs {
            return Err(Error::dims("discriminator inputs", &cs, &xs));
        }
        if cs.len() != 2 || cs[1] != self.config.input_len {
            return Err(Error::dims(
                "discriminator input length",
                &cs,
                &[cs.first().copied().unwrap_or(0), self.config.input_len],
            ));
        }
        let (b, len) = (cs[0], cs[1]);
        let mut ctx = Ctx {
            tape,
            store: &self.store,
            trainable,
            training: true,
        };
        let c = ctx.tape.reshape(candidate, &[1, b, len, 1]);
        let x = ctx.tape.reshape(condition, &[1, b, len, 1]);
        let mut h = ctx.tape.concat(&[c, x], 0);
        let slope = T::from_f64_lossy(self.config.leaky_slope);
        for conv in &self.convs {
            let y = conv.forward(&mut ctx, h);
            h = ctx.tape.leaky_relu(y, slope);
        }
        let h = self.squeeze.forward(&mut ctx, h);
        let flat = ctx.tape.reshape(h, &[b, self.config.final_len()]);
        let w = ctx.param(self.dense.weight_id());
        let w = ctx.tape.spectral_norm(w, &self.dense_sn);
        Ok(self.dense.forward_with(&mut ctx, flat, w))
    }

    /// Scores outside any training graph.
    pub fn score(&self, candidate: &Tensor<T>, condition: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let c = tape.input(candidate.clone());
        let x = tape.input(condition.clone());
        let s = self.forward(&mut tape, c, x, false)?;
        Ok(tape.value(s).clone())
    }
}
