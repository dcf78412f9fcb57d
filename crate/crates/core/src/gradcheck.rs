//! Finite-difference verification of every differentiable building block,
//! run in 64-bit precision.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_difference_gradient, relative_error, ConvGeometry, LstmWeights, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{
    complex_prelu, BatchNormMode, CVar, ComplexBatchNorm, ComplexConv2d, ComplexLinear, ComplexLstm, Conv1d, Ctx,
    ImagSign, Linear, RealLstm, SpectralNormState,
};
use crate::masking::{apply_mask_tape, MaskMode};
use crate::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, RecurrentKind};
use crate::optim::ParamStore;
use crate::signal::{StftConfig, StftPlan};
use crate::tensor::Tensor;
use crate::train::{d_loss_tape, g_adv_loss_tape, l1_tape, LossKind};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Below this gradient norm the absolute error is compared instead.
pub const NORM_FLOOR: f64 = 1e-8;

/// Suite sections selectable with `run(Some(name))`.
pub const MODULES: &[&str] = &[
    "ops",
    "conv",
    "norm",
    "recurrent",
    "linear",
    "spectral",
    "stft",
    "mask",
    "loss",
    "generator",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub module: &'static str,
    pub name: String,
    /// Worst relative error over the checked tensors.
    pub error: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.error < TOLERANCE
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "ok" } else { "FAIL" };
        write!(
            f,
            "{}/{}: relative error {:.3e} {verdict}",
            self.module, self.name, self.error
        )
    }
}

/// Uniform values in `[-1, 1)`.
pub fn random(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum against a fixed random tensor.
pub fn probe_loss(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let w = tape.input(random(seed, tape.shape(v)));
    let p = tape.mul(v, w);
    tape.sum(p)
}

fn probe_complex(tape: &mut Tape<f64>, v: CVar, seed: u64) -> Var {
    let a = probe_loss(tape, v.re, seed);
    let b = probe_loss(tape, v.im, seed + 1);
    tape.add(a, b)
}

/// Compares tape gradients with central differences for each input tensor
/// and each parameter of the model's store, returning the worst error.
///
/// `build(tape, model, trainable, inputs)` must record a scalar loss; with
/// `trainable` false parameters enter the tape as constants.
pub fn check_model<M>(
    model: &mut M,
    store_of: fn(&mut M) -> &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    mut build: impl FnMut(&mut Tape<f64>, &mut M, bool, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&mut tape, model, true, &vars)?;
    tape.backward(loss)?;
    let store = store_of(model);
    store.zero_grads();
    store.accumulate_grads(&tape);
    let param_grads: Vec<_> = store.ids().map(|id| (id, store.get(id).node.grad())).collect();
    store.zero_grads();

    let mut eval = |model: &mut M, xs: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.input(x.clone())).collect();
        match build(&mut t, model, false, &vs) {
            Ok(l) => t.value(l).item(),
            Err(_) => f64::NAN,
        }
    };
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let mut probe = inputs.to_vec();
        let numeric = finite_difference_gradient(
            |p| {
                probe[k] = p.clone();
                eval(model, &probe)
            },
            x,
            FD_STEP,
        )?;
        worst = worst.max(relative_error(&tape.grad(vars[k]), &numeric, NORM_FLOOR));
    }
    for (id, analytic) in param_grads {
        let original = store_of(model).value(id).clone();
        let numeric = finite_difference_gradient(
            |p| {
                *store_of(model).value_mut(id) = p.clone();
                eval(model, inputs)
            },
            &original,
            FD_STEP,
        )?;
        *store_of(model).value_mut(id) = original;
        worst = worst.max(relative_error(&analytic, &numeric, NORM_FLOOR));
    }
    Ok(worst)
}

/// [`check_model`] for functions of the inputs alone.
pub fn check_inputs(inputs: &[Tensor<f64>], mut build: impl FnMut(&mut Tape<f64>, &[Var]) -> Var) -> Result<f64> {
    let mut empty = ParamStore::new();
    check_model(&mut empty, |s| s, inputs, |t, _, _, v| Ok(build(t, v)))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct Suite {
    out: Vec<CheckOutcome>,
}

impl Suite {
    fn push(&mut self, module: &'static str, name: impl Into<String>, error: Result<f64>) -> Result<()> {
        self.out.push(CheckOutcome {
            module,
            name: name.into(),
            error: error?,
        });
        Ok(())
    }
}

fn ops(s: &mut Suite) -> Result<()> {
    let m = "ops";
    s.push(
        m,
        "elementwise",
        check_inputs(&[random(1, &[2, 3]), random(2, &[2, 3])], |t, v| {
            let a = t.tanh(v[0]);
            let b = t.sigmoid(v[1]);
            let p = t.mul(a, b);
            let den = t.square(v[1]);
            let den = t.add_scalar(den, 1.0);
            let q = t.div(v[0], den);
            let r = t.softplus(v[1]);
            let sq = t.square(v[0]);
            let sq = t.add_scalar(sq, 0.5);
            let rt = t.sqrt(sq);
            let ab = t.abs(v[1]);
            let lr = t.leaky_relu(v[0], 0.3);
            let n = t.neg(lr);
            let sc = t.scale(ab, 1.7);
            let mut acc = t.add(p, q);
            for x in [r, rt, n, sc] {
                acc = t.add(acc, x);
            }
            let d = t.sub(acc, v[1]);
            probe_loss(t, d, 3)
        }),
    )?;
    s.push(
        m,
        "reductions",
        check_inputs(&[random(4, &[2, 3, 2])], |t, v| {
            let mean = t.mean(v[0]);
            let sum = t.sum(v[0]);
            let sq = t.square(sum);
            let x = t.add_broadcast_scalar(v[0], mean);
            let p = probe_loss(t, x, 5);
            t.add(p, sq)
        }),
    )?;
    s.push(
        m,
        "channel",
        check_inputs(
            &[
                random(6, &[2, 2, 3, 2]),
                random(7, &[2]),
                random(8, &[2]),
                random(9, &[2]),
                random(10, &[2]),
            ],
            |t, v| {
                let a = t.add_channel(v[0], v[1]);
                let b = t.mul_channel(a, v[2]);
                let c = t.prelu(b, v[3]);
                let mean = t.channel_mean(c);
                let l = t.add_last(v[0], v[4]);
                let p = probe_loss(t, c, 11);
                let q = probe_loss(t, mean, 12);
                let r = probe_loss(t, l, 13);
                let pq = t.add(p, q);
                t.add(pq, r)
            },
        ),
    )?;
    s.push(
        m,
        "shape",
        check_inputs(&[random(14, &[2, 3, 4]), random(15, &[2, 3, 4])], |t, v| {
            let p = t.permute(v[0], &[2, 0, 1]);
            let q = t.permute(v[1], &[2, 0, 1]);
            let c = t.concat(&[p, q], 1);
            let sl = t.slice(c, 1, 1, 2);
            let r = t.reshape(sl, &[4, 6]);
            probe_loss(t, r, 16)
        }),
    )?;
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { random(17, &[3, 2]) } else { random(17, &[2, 3]) };
        let b = if tb { random(18, &[4, 3]) } else { random(18, &[3, 4]) };
        s.push(
            m,
            format!("matmul_{}{}", if ta { "t" } else { "n" }, if tb { "t" } else { "n" }),
            check_inputs(&[a, b], |t, v| {
                let y = t.matmul(v[0], v[1], ta, tb);
                probe_loss(t, y, 19)
            }),
        )?;
    }
    let geom = ConvGeometry {
        kernel: (3, 2),
        stride: (2, 1),
        pad_f: (1, 1),
        pad_t: (1, 0),
    };
    s.push(
        m,
        "conv2d",
        check_inputs(&[random(20, &[2, 2, 4, 3]), random(21, &[3, 2, 3, 2])], |t, v| {
            let y = t.conv2d(v[0], v[1], geom);
            probe_loss(t, y, 22)
        }),
    )?;
    let (fo, to) = geom.output_size(4, 3).unwrap();
    s.push(
        m,
        "conv_transpose2d",
        check_inputs(&[random(23, &[3, 2, fo, to]), random(24, &[3, 2, 3, 2])], |t, v| {
            let y = t.conv_transpose2d(v[0], v[1], geom, (4, 3));
            probe_loss(t, y, 25)
        }),
    )?;
    for reverse in [false, true] {
        let inputs = [
            random(26, &[4, 2, 3]),
            random(27, &[8, 3]),
            random(28, &[8, 2]),
            random(29, &[8]),
        ];
        s.push(
            m,
            if reverse { "lstm_reverse" } else { "lstm" },
            check_inputs(&inputs, |t, v| {
                let w = LstmWeights {
                    w_ih: v[1],
                    w_hh: v[2],
                    bias: v[3],
                };
                let y = t.lstm(v[0], w, reverse);
                probe_loss(t, y, 30)
            }),
        )?;
    }
    Ok(())
}

struct Layer<L> {
    store: ParamStore<f64>,
    layer: L,
}

impl<L> Layer<L> {
    fn store(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }
}

fn ctx<'a>(tape: &'a mut Tape<f64>, store: &'a ParamStore<f64>, trainable: bool) -> Ctx<'a, f64> {
    Ctx {
        tape,
        store,
        trainable,
        training: true,
    }
}

/// Randomizes every parameter so zero-initialized biases are exercised.
fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let shape = store.value(id).shape().to_vec();
        *store.value_mut(id) = random(seed + k as u64, &shape).scale(0.5);
    }
}

fn conv(s: &mut Suite) -> Result<()> {
    let m = "conv";
    for transposed in [false, true] {
        let mut store = ParamStore::new();
        let layer = ComplexConv2d::new(&mut store, "c", 2, 2, transposed, &mut rng(1));
        let alpha = store.add("prelu", Tensor::from_vec(&[2], vec![0.25, -0.4]).unwrap());
        randomize(&mut store, 40);
        let mut l = Layer { store, layer };
        let (in_ft, out_ft) = if transposed { ((2, 2), (4, 2)) } else { ((4, 2), (4, 2)) };
        let inputs = [
            random(2, &[2, 2, in_ft.0, in_ft.1]),
            random(3, &[2, 2, in_ft.0, in_ft.1]),
        ];
        let name = if transposed {
            "complex_transposed_conv2d"
        } else {
            "complex_conv2d"
        };
        s.push(
            m,
            name,
            check_model(&mut l, Layer::store, &inputs, |t, l, tr, v| {
                let mut c = ctx(t, &l.store, tr);
                let y = l.layer.forward(&mut c, CVar { re: v[0], im: v[1] }, out_ft);
                let a = c.param(alpha);
                let y = complex_prelu(c.tape, y, a);
                Ok(probe_complex(t, y, 4))
            }),
        )?;
    }
    Ok(())
}

fn norm(s: &mut Suite) -> Result<()> {
    for mode in [BatchNormMode::Naive, BatchNormMode::Whitening] {
        let mut store = ParamStore::new();
        let layer = ComplexBatchNorm::new(&mut store, "bn", 2, mode);
        randomize(&mut store, 50);
        let mut l = Layer { store, layer };
        let inputs = [random(5, &[2, 2, 3, 2]), random(6, &[2, 2, 3, 2])];
        s.push(
            "norm",
            format!("batch_norm_{mode:?}").to_lowercase(),
            check_model(&mut l, Layer::store, &inputs, |t, l, tr, v| {
                let Layer { store, layer } = l;
                let mut c = ctx(t, store, tr);
                let y = layer.forward(&mut c, CVar { re: v[0], im: v[1] })?;
                Ok(probe_complex(t, y, 7))
            }),
        )?;
    }
    Ok(())
}

fn recurrent(s: &mut Suite) -> Result<()> {
    let m = "recurrent";
    let mut store = ParamStore::new();
    let layer = RealLstm::new(&mut store, "rnn", 3, 2, 2, &mut rng(2));
    let mut l = Layer { store, layer };
    s.push(
        m,
        "real_lstm",
        check_model(&mut l, Layer::store, &[random(8, &[3, 2, 3])], |t, l, tr, v| {
            let mut c = ctx(t, &l.store, tr);
            let y = l.layer.forward(&mut c, v[0]);
            Ok(probe_loss(t, y, 9))
        }),
    )?;
    for (bi, sign) in [
        (false, ImagSign::Minus),
        (true, ImagSign::Minus),
        (true, ImagSign::Plus),
    ] {
        let mut store = ParamStore::new();
        let layer = ComplexLstm::new(&mut store, "rnn", 3, 2, 2, bi, sign, &mut rng(3));
        let mut l = Layer { store, layer };
        let inputs = [random(10, &[3, 2, 3]), random(11, &[3, 2, 3])];
        let name = format!("complex_lstm{}_{sign:?}", if bi { "_bidirectional" } else { "" }).to_lowercase();
        s.push(
            m,
            name,
            check_model(&mut l, Layer::store, &inputs, |t, l, tr, v| {
                let mut c = ctx(t, &l.store, tr);
                let y = l.layer.forward(&mut c, CVar { re: v[0], im: v[1] });
                Ok(probe_complex(t, y, 12))
            }),
        )?;
    }
    Ok(())
}

fn linear(s: &mut Suite) -> Result<()> {
    let m = "linear";
    let mut store = ParamStore::new();
    let layer = Linear::new(&mut store, "fc", 4, 3, &mut rng(4));
    randomize(&mut store, 60);
    let mut l = Layer { store, layer };
    s.push(
        m,
        "linear",
        check_model(&mut l, Layer::store, &[random(13, &[2, 2, 4])], |t, l, tr, v| {
            let mut c = ctx(t, &l.store, tr);
            let y = l.layer.forward(&mut c, v[0]);
            Ok(probe_loss(t, y, 14))
        }),
    )?;
    let mut store = ParamStore::new();
    let layer = ComplexLinear::new(&mut store, "fc", 4, 3, &mut rng(5));
    randomize(&mut store, 70);
    let mut l = Layer { store, layer };
    let inputs = [random(15, &[2, 2, 4]), random(16, &[2, 2, 4])];
    s.push(
        m,
        "complex_linear",
        check_model(&mut l, Layer::store, &inputs, |t, l, tr, v| {
            let mut c = ctx(t, &l.store, tr);
            let y = l.layer.forward(&mut c, CVar { re: v[0], im: v[1] });
            Ok(probe_complex(t, y, 17))
        }),
    )?;
    Ok(())
}

fn spectral(s: &mut Suite) -> Result<()> {
    let m = "spectral";
    let mut sn = SpectralNormState::new(3, 4, 3, &mut rng(6));
    let w0 = random(18, &[3, 4]);
    sn.power_iterate(&w0);
    s.push(
        m,
        "spectral_norm",
        check_inputs(&[w0], |t, v| {
            let n = t.spectral_norm(v[0], &sn);
            probe_loss(t, n, 19)
        }),
    )?;
    let mut store = ParamStore::new();
    let mut layer = Conv1d::new(&mut store, "c", 2, 3, 5, 2, true, &mut rng(7));
    randomize(&mut store, 80);
    layer.update_sn(&store);
    let mut l = Layer { store, layer };
    s.push(
        m,
        "sn_conv1d",
        check_model(&mut l, Layer::store, &[random(20, &[2, 2, 8, 1])], |t, l, tr, v| {
            let mut c = ctx(t, &l.store, tr);
            let y = l.layer.forward(&mut c, v[0]);
            let y = t.leaky_relu(y, 0.3);
            Ok(probe_loss(t, y, 21))
        }),
    )?;
    Ok(())
}

fn stft(s: &mut Suite) -> Result<()> {
    let plan = StftPlan::<f64>::new(&StftConfig::new(12, 6, 16)?);
    s.push(
        "stft",
        "analysis",
        check_inputs(&[random(22, &[2, 30])], |t, v| {
            let (re, im) = t.stft(v[0], &plan);
            probe_complex(t, CVar { re, im }, 23)
        }),
    )?;
    let frames = plan.config().frames(30)?;
    let bins = plan.config().bins();
    let inputs = [random(24, &[1, 2, bins, frames]), random(25, &[1, 2, bins, frames])];
    s.push(
        "stft",
        "synthesis",
        check_inputs(&inputs, |t, v| {
            let y = t.istft(v[0], v[1], &plan, 30);
            probe_loss(t, y, 26)
        }),
    )?;
    Ok(())
}

fn mask(s: &mut Suite) -> Result<()> {
    for mode in MaskMode::ALL {
        let inputs: Vec<_> = (0..4).map(|k| random(27 + k, &[1, 2, 3, 2])).collect();
        s.push(
            "mask",
            mode.to_string(),
            check_inputs(&inputs, |t, v| {
                let y = apply_mask_tape(t, CVar { re: v[0], im: v[1] }, CVar { re: v[2], im: v[3] }, mode);
                probe_complex(t, y, 31)
            }),
        )?;
    }
    Ok(())
}

fn loss(s: &mut Suite) -> Result<()> {
    for kind in [LossKind::Relativistic, LossKind::RelativisticAverage] {
        let inputs = [random(32, &[3, 1]).scale(2.0), random(33, &[3, 1]).scale(2.0)];
        s.push(
            "loss",
            format!("{kind}_discriminator"),
            check_inputs(&inputs, |t, v| d_loss_tape(t, v[0], v[1], kind)),
        )?;
        s.push(
            "loss",
            format!("{kind}_generator"),
            check_inputs(&inputs, |t, v| g_adv_loss_tape(t, v[0], v[1], kind)),
        )?;
    }
    s.push(
        "loss",
        "l1",
        check_inputs(&[random(34, &[2, 4]), random(35, &[2, 4])], |t, v| {
            l1_tape(t, v[0], v[1])
        }),
    )?;
    Ok(())
}

struct GanPair {
    g: Generator<f64>,
    d: Discriminator<f64>,
}

fn generator_store(p: &mut GanPair) -> &mut ParamStore<f64> {
    &mut p.g.store
}

/// Loss through a full generator forward with a frozen discriminator.
pub fn check_generator(cfg: GeneratorConfig, kind: LossKind, lambda_l1: f64, seed: u64) -> Result<f64> {
    let len = 48;
    let g = Generator::new(cfg, &mut rng(seed))?;
    let d = Discriminator::new(DiscriminatorConfig::gradcheck(len), &mut rng(seed + 1))?;
    let mut pair = GanPair { g, d };
    let x = random(seed + 2, &[2, len]);
    let y = random(seed + 3, &[2, len]);
    check_model(&mut pair, generator_store, &[], |t, p, trainable, _| {
        let xv = t.input(x.clone());
        let yv = t.input(y.clone());
        let fake = p.g.forward(t, xv, trainable, true)?.wave;
        let sf = p.d.forward(t, fake, xv, false)?;
        let sr = p.d.forward(t, yv, xv, false)?;
        let adv = g_adv_loss_tape(t, sr, sf, kind);
        if lambda_l1 == 0.0 {
            return Ok(adv);
        }
        let l1 = l1_tape(t, fake, yv);
        let w = t.scale(l1, lambda_l1);
        Ok(t.add(adv, w))
    })
}

fn generator(s: &mut Suite) -> Result<()> {
    let base = GeneratorConfig::gradcheck();
    for kind in RecurrentKind::ALL {
        let cfg = GeneratorConfig {
            recurrent_kind: kind,
            ..base.clone()
        };
        s.push(
            "generator",
            format!("{kind}_relativistic"),
            check_generator(cfg, LossKind::Relativistic, 0.0, 100),
        )?;
    }
    for mode in [MaskMode::Polar, MaskMode::Real] {
        let cfg = GeneratorConfig {
            mask_mode: mode,
            ..base.clone()
        };
        s.push(
            "generator",
            format!("{mode}_mask_relativistic"),
            check_generator(cfg, LossKind::Relativistic, 0.0, 201),
        )?;
    }
    s.push(
        "generator",
        "whitening_bn_relativistic",
        check_generator(
            GeneratorConfig {
                bn_mode: BatchNormMode::Whitening,
                ..base.clone()
            },
            LossKind::Relativistic,
            0.0,
            300,
        ),
    )?;
    s.push(
        "generator",
        "relativistic_average_with_l1",
        check_generator(base, LossKind::RelativisticAverage, 100.0, 400),
    )?;
    Ok(())
}

/// Runs the whole suite, or one section of it.
pub fn run(module: Option<&str>) -> Result<Vec<CheckOutcome>> {
    if let Some(m) = module {
        if !MODULES.contains(&m) {
            return Err(Error::Config(format!(
                "unknown gradcheck module {m:?}; expected one of {}",
                MODULES.join(", ")
            )));
        }
    }
    let mut s = Suite { out: Vec::new() };
    let sections: [(&str, fn(&mut Suite) -> Result<()>); 10] = [
        ("ops", ops),
        ("conv", conv),
        ("norm", norm),
        ("recurrent", recurrent),
        ("linear", linear),
        ("spectral", spectral),
        ("stft", stft),
        ("mask", mask),
        ("loss", loss),
        ("generator", generator),
    ];
    for (name, f) in sections {
        if module.is_none_or(|m| m == name) {
            f(&mut s)?;
        }
    }
    Ok(s.out)
}
