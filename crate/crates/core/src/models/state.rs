//! Checkpoint (de)serialization of model configurations and state.

use super::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, RecurrentKind};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::layers::{BatchNormMode, ImagSign};
use crate::masking::MaskMode;
use crate::optim::ParamStore;
use crate::signal::StftConfig;
use crate::tensor::{Real, Tensor};

fn ints(values: &[usize]) -> Tensor<f64> {
    Tensor::from_vec(&[values.len()], values.iter().map(|&v| v as f64).collect()).unwrap()
}

fn one(ck: &Checkpoint, name: &str) -> Result<usize> {
    let v = ck.integers(name)?;
    match v.as_slice() {
        [x] => Ok(*x),
        _ => Err(Error::Checkpoint(format!("entry {name} should hold one integer"))),
    }
}

/// Parameter values and optimizer moments of every entry in `store`.
pub fn save_store<T: Real>(store: &ParamStore<T>, ck: &mut Checkpoint, prefix: &str) {
    for p in store.iter() {
        ck.push(format!("{prefix}/{}", p.name), &p.node.value);
        ck.push(format!("{prefix}/{}/adam_m", p.name), &p.adam.m);
        ck.push(format!("{prefix}/{}/adam_v", p.name), &p.adam.v);
        ck.push_scalar(format!("{prefix}/{}/adam_step", p.name), p.adam.step as f64);
    }
}

pub fn load_store<T: Real>(store: &mut ParamStore<T>, ck: &Checkpoint, prefix: &str) -> Result<()> {
    for p in store.iter_mut() {
        let shape = p.node.value.shape().to_vec();
        p.node.value = ck.tensor(&format!("{prefix}/{}", p.name), &shape)?;
        p.adam.m = ck.tensor(&format!("{prefix}/{}/adam_m", p.name), &shape)?;
        p.adam.v = ck.tensor(&format!("{prefix}/{}/adam_v", p.name), &shape)?;
        p.adam.step = one(ck, &format!("{prefix}/{}/adam_step", p.name))? as u64;
        p.node.zero_grad();
    }
    Ok(())
}

pub fn save_generator_config(cfg: &GeneratorConfig, ck: &mut Checkpoint) {
    ck.push("config/g/encoder_channels", &ints(&cfg.encoder_channels));
    ck.push("config/g/recurrent_kind", &ints(&[cfg.recurrent_kind.code() as usize]));
    ck.push("config/g/recurrent_layers", &ints(&[cfg.recurrent_layers]));
    ck.push("config/g/recurrent_units", &ints(&[cfg.recurrent_units]));
    ck.push("config/g/mask_mode", &ints(&[cfg.mask_mode.code() as usize]));
    ck.push(
        "config/g/stft",
        &ints(&[cfg.stft.win_len, cfg.stft.hop, cfg.stft.fft_len]),
    );
    ck.push(
        "config/g/bn_whitening",
        &ints(&[(cfg.bn_mode == BatchNormMode::Whitening) as usize]),
    );
    ck.push(
        "config/g/imag_sign_plus",
        &ints(&[(cfg.imag_sign == ImagSign::Plus) as usize]),
    );
}

pub fn load_generator_config(ck: &Checkpoint) -> Result<GeneratorConfig> {
    let code = |name: &str| -> Result<u8> {
        u8::try_from(one(ck, name)?).map_err(|_| Error::Checkpoint(format!("bad code in {name}")))
    };
    let stft = ck.integers("config/g/stft")?;
    let [win, hop, fft] = stft[..] else {
        return Err(Error::Checkpoint("config/g/stft should hold win, hop, fft".into()));
    };
    let cfg = GeneratorConfig {
        encoder_channels: ck.integers("config/g/encoder_channels")?,
        recurrent_kind: RecurrentKind::from_code(code("config/g/recurrent_kind")?)
            .ok_or_else(|| Error::Checkpoint("unknown recurrent kind".into()))?,
        recurrent_layers: one(ck, "config/g/recurrent_layers")?,
        recurrent_units: one(ck, "config/g/recurrent_units")?,
        mask_mode: MaskMode::from_code(code("config/g/mask_mode")?)
            .ok_or_else(|| Error::Checkpoint("unknown mask mode".into()))?,
        stft: StftConfig::new(win, hop, fft)?,
        bn_mode: if one(ck, "config/g/bn_whitening")? == 1 {
            BatchNormMode::Whitening
        } else {
            BatchNormMode::Naive
        },
        imag_sign: if one(ck, "config/g/imag_sign_plus")? == 1 {
            ImagSign::Plus
        } else {
            ImagSign::Minus
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_discriminator_config(cfg: &DiscriminatorConfig, ck: &mut Checkpoint) {
    ck.push("config/d/channels", &ints(&cfg.channels));
    ck.push("config/d/geometry", &ints(&[cfg.filter_len, cfg.stride, cfg.input_len]));
    ck.push_scalar("config/d/leaky_slope", cfg.leaky_slope);
}

pub fn load_discriminator_config(ck: &Checkpoint) -> Result<DiscriminatorConfig> {
    let geom = ck.integers("config/d/geometry")?;
    let [filter_len, stride, input_len] = geom[..] else {
        return Err(Error::Checkpoint(
            "config/d/geometry should hold filter, stride, length".into(),
        ));
    };
    let cfg = DiscriminatorConfig {
        channels: ck.integers("config/d/channels")?,
        filter_len,
        stride,
        // undo the f32 rounding of the stored slope
        leaky_slope: (ck.scalar("config/d/leaky_slope")? * 1e6).round() / 1e6,
        input_len,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl<T: Real> Generator<T> {
    /// Parameters, optimizer moments and normalization statistics.
    pub fn save_state(&self, ck: &mut Checkpoint, prefix: &str) {
        save_store(&self.store, ck, prefix);
        for bn in self.batch_norms() {
            let base = bn_base(&self.store, bn.param_ids()[0]);
            ck.push(format!("{prefix}/{base}/running"), &bn.running);
            ck.push_scalar(format!("{prefix}/{base}/initialized"), bn.initialized as u8 as f64);
        }
    }

    pub fn load_state(&mut self, ck: &Checkpoint, prefix: &str) -> Result<()> {
        load_store(&mut self.store, ck, prefix)?;
        let names: Vec<String> = self
            .batch_norms()
            .iter()
            .map(|bn| bn_base(&self.store, bn.param_ids()[0]))
            .collect();
        for (bn, base) in self.batch_norms_mut().into_iter().zip(names) {
            let shape = bn.running.shape().to_vec();
            bn.running = ck.tensor(&format!("{prefix}/{base}/running"), &shape)?;
            bn.initialized = one(ck, &format!("{prefix}/{base}/initialized"))? == 1;
        }
        Ok(())
    }
}

fn bn_base<T: Real>(store: &ParamStore<T>, id: crate::optim::ParamId) -> String {
    let name = &store.get(id).name;
    name.rsplit_once('/').map_or(name.clone(), |(base, _)| base.to_string())
}

impl<T: Real> Discriminator<T> {
    /// Parameters, optimizer moments and power-iteration vectors.
    pub fn save_state(&self, ck: &mut Checkpoint, prefix: &str) {
        save_store(&self.store, ck, prefix);
        for (name, sn) in self.sn_states() {
            ck.push(format!("{prefix}/{name}/sn_u"), &sn.u);
            ck.push(format!("{prefix}/{name}/sn_v"), &sn.v);
        }
    }

    pub fn load_state(&mut self, ck: &Checkpoint, prefix: &str) -> Result<()> {
        load_store(&mut self.store, ck, prefix)?;
        for (name, sn) in self.sn_states_mut() {
            let (us, vs) = (sn.u.shape().to_vec(), sn.v.shape().to_vec());
            sn.u = ck.tensor(&format!("{prefix}/{name}/sn_u"), &us)?;
            sn.v = ck.tensor(&format!("{prefix}/{name}/sn_v"), &vs)?;
        }
        Ok(())
    }
}
