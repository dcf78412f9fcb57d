use rand::Rng;

use super::{GeneratorConfig, RecurrentKind};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{
    complex_prelu, CVar, ComplexBatchNorm, ComplexConv2d, ComplexLinear, ComplexLstm, Ctx, Linear, RealLstm,
};
use crate::masking::apply_mask_tape;
use crate::optim::{ParamId, ParamStore};
use crate::signal::{reconstruct_utterance, slice_utterance, StftPlan};
use crate::tensor::{Real, Tensor};

const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Debug)]
struct Block<T> {
    conv: ComplexConv2d,
    /// Absent on the mask head.
    norm: Option<(ComplexBatchNorm<T>, ParamId)>,
}

impl<T: Real> Block<T> {
    fn new(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        transposed: bool,
        head: bool,
        cfg: &GeneratorConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let conv = ComplexConv2d::new(store, &format!("{name}/conv"), in_ch, out_ch, transposed, rng);
        let norm = (!head).then(|| {
            let bn = ComplexBatchNorm::new(store, &format!("{name}/bn"), out_ch, cfg.bn_mode);
            let alpha = store.add(
                format!("{name}/prelu"),
                Tensor::full(&[out_ch], T::from_f64_lossy(PRELU_INIT)),
            );
            (bn, alpha)
        });
        Block { conv, norm }
    }

    fn forward(&mut self, ctx: &mut Ctx<'_, T>, x: CVar, out_ft: (usize, usize)) -> Result<CVar> {
        let y = self.conv.forward(ctx, x, out_ft);
        match &mut self.norm {
            None => Ok(y),
            Some((bn, alpha)) => {
                let y = bn.forward(ctx, y)?;
                let a = ctx.param(*alpha);
                Ok(complex_prelu(ctx.tape, y, a))
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Bottleneck {
    None,
    Real { lstm: RealLstm, proj: Linear },
    Complex { lstm: ComplexLstm, proj: ComplexLinear },
}

/// Tape handles produced by one generator pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorOutput {
    /// Enhanced waveforms `[B, L]`.
    pub wave: Var,
    /// Mask planes `[1, B, bins, frames]`.
    pub mask: CVar,
    /// Noisy spectrum planes the mask was applied to.
    pub spectrum: CVar,
}

#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub store: ParamStore<T>,
    encoder: Vec<Block<T>>,
    decoder: Vec<Block<T>>,
    bottleneck: Bottleneck,
    plan: StftPlan<T>,
}

impl<T: Real> Generator<T> {
    pub fn new(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let ch = &config.encoder_channels;
        let depth = ch.len();
        let mut encoder = Vec::with_capacity(depth);
        for (l, &out) in ch.iter().enumerate() {
            let input = if l == 0 { 1 } else { ch[l - 1] };
            encoder.push(Block::new(
                &mut store,
                &format!("enc{l}"),
                input,
                out,
                false,
                false,
                &config,
                rng,
            ));
        }
        let features = config.bottleneck_features();
        let hidden = config.lstm_hidden();
        let bottleneck = if config.recurrent_layers == 0 {
            Bottleneck::None
        } else {
            match config.recurrent_kind {
                RecurrentKind::RealLstm => {
                    let lstm = RealLstm::new(&mut store, "rnn", 2 * features, hidden, config.recurrent_layers, rng);
                    let proj = Linear::new(&mut store, "proj", lstm.out_features(), 2 * features, rng);
                    Bottleneck::Real { lstm, proj }
                }
                kind => {
                    let bidir = kind == RecurrentKind::ComplexBiLstm;
                    let lstm = ComplexLstm::new(
                        &mut store,
                        "rnn",
                        features,
                        hidden,
                        config.recurrent_layers,
                        bidir,
                        config.imag_sign,
                        rng,
                    );
                    let proj = ComplexLinear::new(&mut store, "proj", lstm.out_features(), features, rng);
                    Bottleneck::Complex { lstm, proj }
                }
            }
        };
        let mut decoder = Vec::with_capacity(depth);
        for l in (0..depth).rev() {
            let head = l == 0;
            let out = if head { 1 } else { ch[l - 1] };
            decoder.push(Block::new(
                &mut store,
                &format!("dec{l}"),
                2 * ch[l],
                out,
                true,
                head,
                &config,
                rng,
            ));
        }
        let plan = StftPlan::new(&config.stft);
        Ok(Generator {
            config,
            store,
            encoder,
            decoder,
            bottleneck,
            plan,
        })
    }

    pub fn plan(&self) -> &StftPlan<T> {
        &self.plan
    }

    /// Records the generator on `tape` for waveforms `x: [B, L]`.
    ///
    /// `trainable` binds the parameters as gradient-receiving leaves;
    /// `training` selects batch rather than running normalization statistics.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, trainable: bool, training: bool) -> Result<GeneratorOutput> {
        let s = tape.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("generator input", format!("expected [B, L], got {s:?}")));
        }
        let len = s[1];
        self.config.stft.frames(len)?;
        let Generator {
            store,
            encoder,
            decoder,
            bottleneck,
            plan,
            config,
        } = self;
        let mut ctx = Ctx {
            tape,
            store,
            trainable,
            training,
        };

        let (re, im) = ctx.tape.stft(x, plan);
        let spectrum = CVar { re, im };
        let frames = ctx.tape.shape(re)[3];
        let mut h = spectrum;
        let mut skips = Vec::with_capacity(encoder.len());
        let mut sizes = Vec::with_capacity(encoder.len());
        for block in encoder.iter_mut() {
            sizes.push(ctx.tape.shape(h.re)[2]);
            h = block.forward(&mut ctx, h, (0, 0))?;
            skips.push(h);
        }
        h = run_bottleneck(&mut ctx, bottleneck, h, config)?;
        for (block, (skip, f)) in decoder.iter_mut().zip(skips.into_iter().zip(sizes).rev()) {
            let hs = ctx.tape.shape(h.re).to_vec();
            let ss = ctx.tape.shape(skip.re).to_vec();
            if hs[1..] != ss[1..] {
                return Err(Error::dims("decoder skip connection", &hs, &ss));
            }
            let joined = CVar {
                re: ctx.tape.concat(&[h.re, skip.re], 0),
                im: ctx.tape.concat(&[h.im, skip.im], 0),
            };
            h = block.forward(&mut ctx, joined, (f, frames))?;
        }
        let mask = h;
        let ms = ctx.tape.shape(mask.re).to_vec();
        let xs = ctx.tape.shape(spectrum.re).to_vec();
        if ms != xs {
            return Err(Error::dims("mask head", &ms, &xs));
        }
        let est = apply_mask_tape(ctx.tape, spectrum, mask, config.mask_mode);
        let wave = ctx.tape.istft(est.re, est.im, plan, len);
        Ok(GeneratorOutput { wave, mask, spectrum })
    }

    /// Enhances a batch of slices `[B, L]` outside any training graph.
    pub fn enhance_batch(&mut self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let out = self.forward(&mut tape, xv, false, training)?;
        Ok(tape.value(out.wave).clone())
    }

    /// Enhances an utterance of any length by slicing, batching the slices
    /// and overlap-adding the results.
    pub fn enhance_utterance(&mut self, wave: &[T], batch: usize) -> Result<Vec<T>> {
        let sliced = slice_utterance(wave);
        let mut out = Vec::with_capacity(sliced.slices.len());
        for chunk in sliced.slices.chunks(batch.max(1)) {
            let len = chunk[0].len();
            let flat: Vec<T> = chunk.iter().flatten().copied().collect();
            let y = self.enhance_batch(&Tensor::from_vec(&[chunk.len(), len], flat)?, false)?;
            out.extend(y.data().chunks(len).map(|c| c.to_vec()));
        }
        reconstruct_utterance(&out, sliced.original_len)
    }

    /// Normalization layers, encoder first.
    pub fn batch_norms(&self) -> Vec<&ComplexBatchNorm<T>> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .filter_map(|b| b.norm.as_ref().map(|(bn, _)| bn))
            .collect()
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut ComplexBatchNorm<T>> {
        self.encoder
            .iter_mut()
            .chain(&mut self.decoder)
            .filter_map(|b| b.norm.as_mut().map(|(bn, _)| bn))
            .collect()
    }

    /// Complex kernel ids of every decoder layer, deepest first.
    pub fn decoder_kernels(&self) -> Vec<(ParamId, ParamId)> {
        self.decoder.iter().map(|b| b.conv.kernel_ids()).collect()
    }

    /// Complex kernel ids of every encoder layer.
    pub fn encoder_kernels(&self) -> Vec<(ParamId, ParamId)> {
        self.encoder.iter().map(|b| b.conv.kernel_ids()).collect()
    }

    /// Bias ids `(re, im)` of the mask head.
    pub fn head_bias(&self) -> (ParamId, ParamId) {
        let name = self
            .store
            .get(self.decoder.last().unwrap().conv.kernel_ids().0)
            .name
            .clone();
        let base = name.trim_end_matches("/a");
        (
            self.store.find(&format!("{base}/bias_re")).unwrap(),
            self.store.find(&format!("{base}/bias_im")).unwrap(),
        )
    }
}

fn run_bottleneck<T: Real>(ctx: &mut Ctx<'_, T>, b: &Bottleneck, h: CVar, cfg: &GeneratorConfig) -> Result<CVar> {
    let s = ctx.tape.shape(h.re).to_vec();
    let (c, batch, f, t) = (s[0], s[1], s[2], s[3]);
    if c * f != cfg.bottleneck_features() {
        return Err(Error::dims(
            "bottleneck features",
            &[c, f],
            &[cfg.bottleneck_features()],
        ));
    }
    // [C, B, F, T] → [T, B, C·F], channel-major then frequency
    let to_seq = |tape: &mut Tape<T>, v: Var| {
        let p = tape.permute(v, &[3, 1, 0, 2]);
        tape.reshape(p, &[t, batch, c * f])
    };
    let from_seq = |tape: &mut Tape<T>, v: Var| {
        let r = tape.reshape(v, &[t, batch, c, f]);
        tape.permute(r, &[2, 1, 3, 0])
    };
    match b {
        Bottleneck::None => Ok(h),
        Bottleneck::Real { lstm, proj } => {
            let xr = to_seq(ctx.tape, h.re);
            let xi = to_seq(ctx.tape, h.im);
            let seq = ctx.tape.concat(&[xr, xi], 2);
            let y = lstm.forward(ctx, seq);
            let y = proj.forward(ctx, y);
            let re = ctx.tape.slice(y, 2, 0, c * f);
            let im = ctx.tape.slice(y, 2, c * f, c * f);
            Ok(CVar {
                re: from_seq(ctx.tape, re),
                im: from_seq(ctx.tape, im),
            })
        }
        Bottleneck::Complex { lstm, proj } => {
            let seq = CVar {
                re: to_seq(ctx.tape, h.re),
                im: to_seq(ctx.tape, h.im),
            };
            let y = lstm.forward(ctx, seq);
            let y = proj.forward(ctx, y);
            Ok(CVar {
                re: from_seq(ctx.tape, y.re),
                im: from_seq(ctx.tape, y.im),
            })
        }
    }
}
