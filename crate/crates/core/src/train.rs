//! Adversarial training: relativistic losses, the alternating update, the
//! epoch loop with learning-rate decay, and training checkpoints.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::si_sdr;
use crate::models::{
    load_discriminator_config, load_generator_config, save_discriminator_config, save_generator_config, Discriminator,
    DiscriminatorConfig, Generator, GeneratorConfig,
};
use crate::signal::slice_utterance;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossKind {
    /// Scores compared pairwise.
    #[default]
    Relativistic,
    /// Scores compared with the batch mean of the other class.
    RelativisticAverage,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Relativistic => "r",
            LossKind::RelativisticAverage => "ra",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r" => Ok(LossKind::Relativistic),
            "ra" => Ok(LossKind::RelativisticAverage),
            other => Err(Error::Config(format!("unknown loss {other:?} (expected r or ra)"))),
        }
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_scores(real: &[f64], fake: &[f64]) -> Result<()> {
    if real.len() != fake.len() {
        return Err(Error::dims("score batches", &[real.len()], &[fake.len()]));
    }
    if real.is_empty() {
        return Err(Error::Degenerate("empty score batch".into()));
    }
    Ok(())
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// `−mean log σ(real − fake)`.
pub fn relativistic_d_loss(real: &[f64], fake: &[f64]) -> Result<f64> {
    check_scores(real, fake)?;
    Ok(mean(real.iter().zip(fake).map(|(r, f)| softplus(f - r)), real.len()))
}

/// `−mean log σ(fake − real)`.
pub fn relativistic_g_adv_loss(real: &[f64], fake: &[f64]) -> Result<f64> {
    relativistic_d_loss(fake, real)
}

/// `(g_loss, d_loss)` of the batch-mean relativistic form.
pub fn relativistic_average_losses(real: &[f64], fake: &[f64]) -> Result<(f64, f64)> {
    check_scores(real, fake)?;
    let n = real.len();
    let mr = mean(real.iter().copied(), n);
    let mf = mean(fake.iter().copied(), n);
    // −log σ(z) = softplus(−z), −log(1 − σ(z)) = softplus(z)
    let g = mean(fake.iter().map(|f| softplus(-(f - mr))), n) + mean(real.iter().map(|r| softplus(r - mf)), n);
    let d = mean(real.iter().map(|r| softplus(-(r - mf))), n) + mean(fake.iter().map(|f| softplus(f - mr)), n);
    Ok((g, d))
}

/// `adv + λ·mean|g_out − y|`.
pub fn generator_total_loss(adv: f64, g_out: &[f64], y: &[f64], lambda_l1: f64) -> Result<f64> {
    if g_out.len() != y.len() {
        return Err(Error::dims("generator_total_loss", &[g_out.len()], &[y.len()]));
    }
    if g_out.is_empty() {
        return Ok(adv);
    }
    Ok(adv + lambda_l1 * mean(g_out.iter().zip(y).map(|(a, b)| (a - b).abs()), y.len()))
}

fn diff_mean<T: Real>(tape: &mut Tape<T>, a: Var, b_mean_of: Var) -> Var {
    let m = tape.mean(b_mean_of);
    let nm = tape.neg(m);
    tape.add_broadcast_scalar(a, nm)
}

/// Discriminator loss on the tape for score batches `[B, 1]`.
pub fn d_loss_tape<T: Real>(tape: &mut Tape<T>, real: Var, fake: Var, kind: LossKind) -> Var {
    match kind {
        LossKind::Relativistic => {
            let d = tape.sub(fake, real);
            let s = tape.softplus(d);
            tape.mean(s)
        }
        LossKind::RelativisticAverage => {
            let r = diff_mean(tape, real, fake);
            let nr = tape.neg(r);
            let a = tape.softplus(nr);
            let a = tape.mean(a);
            let f = diff_mean(tape, fake, real);
            let b = tape.softplus(f);
            let b = tape.mean(b);
            tape.add(a, b)
        }
    }
}

/// Adversarial generator loss on the tape.
pub fn g_adv_loss_tape<T: Real>(tape: &mut Tape<T>, real: Var, fake: Var, kind: LossKind) -> Var {
    // both forms are the discriminator loss with the classes swapped
    d_loss_tape(tape, fake, real, kind)
}

/// `mean|a − b|` on the tape.
pub fn l1_tape<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let d = tape.abs(d);
    tape.mean(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Factor applied to both learning rates when the epoch loss rises.
    pub lr_decay: f64,
    pub lambda_l1: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Share of utterances held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            lr: 0.001,
            lr_decay: 0.5,
            lambda_l1: 100.0,
            loss: LossKind::Relativistic,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(Error::Config(format!(
                "L1 weight must be finite and non-negative, got {}",
                self.lambda_l1
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        Ok(())
    }
}

/// Halves (by `decay`) the learning rate whenever the monitored loss
/// exceeds its value of the previous epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr: f64,
    pub decay: f64,
    pub previous: Option<f64>,
}

impl LrSchedule {
    pub fn new(lr: f64, decay: f64) -> Self {
        LrSchedule {
            lr,
            decay,
            previous: None,
        }
    }

    /// Records an epoch loss; returns whether the rate was decayed.
    pub fn observe(&mut self, loss: f64) -> bool {
        let rose = self.previous.is_some_and(|p| loss > p);
        if rose {
            self.lr *= self.decay;
        }
        self.previous = Some(loss);
        rose
    }
}

/// Generator, discriminator and their shared learning-rate schedule.
#[derive(Clone, Debug)]
pub struct Gan<T> {
    pub g: Generator<T>,
    pub d: Discriminator<T>,
    pub schedule: LrSchedule,
    /// Completed epochs.
    pub epoch: usize,
}

/// Values reported by one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Adversarial term plus weighted L1.
    pub g_loss: f64,
    pub g_adv: f64,
    pub d_loss: f64,
    pub l1: f64,
}

fn finite(value: f64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric(format!("{term} is {value}")))
    }
}

impl<T: Real> Gan<T> {
    pub fn new(g: GeneratorConfig, d: DiscriminatorConfig, lr: f64, lr_decay: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Gan {
            g: Generator::new(g, &mut rng)?,
            d: Discriminator::new(d, &mut rng)?,
            schedule: LrSchedule::new(lr, lr_decay),
            epoch: 0,
        })
    }

    /// One discriminator update followed by one generator update on the
    /// batch `x` (noisy) / `y` (clean), both `[B, L]`.
    pub fn train_step(&mut self, x: &Tensor<T>, y: &Tensor<T>, cfg: &TrainConfig) -> Result<StepStats> {
        x.check_same_shape(y, "training batch")?;
        let b = x.shape()[0];
        let lr = T::from_f64_lossy(self.schedule.lr);

        let mut gt = Tape::new();
        let xv = gt.input(x.clone());
        let yv = gt.input(y.clone());
        let fake = self.g.forward(&mut gt, xv, true, true)?.wave;

        self.d.update_sn();
        let d_loss = {
            let mut dt = Tape::new();
            let f = dt.input(gt.value(fake).clone());
            let r = dt.input(y.clone());
            let c = dt.input(x.clone());
            let cand = dt.concat(&[f, r], 0);
            let cond = dt.concat(&[c, c], 0);
            let s = self.d.forward(&mut dt, cand, cond, true)?;
            let sf = dt.slice(s, 0, 0, b);
            let sr = dt.slice(s, 0, b, b);
            let loss = d_loss_tape(&mut dt, sr, sf, cfg.loss);
            let value = finite(dt.value(loss).item().to_f64().unwrap(), "discriminator loss")?;
            dt.backward(loss)?;
            self.d.store.accumulate_grads(&dt);
            self.d.store.adam_step(lr)?;
            self.d.store.zero_grads();
            value
        };

        let cand = gt.concat(&[fake, yv], 0);
        let cond = gt.concat(&[xv, xv], 0);
        let s = self.d.forward(&mut gt, cand, cond, false)?;
        let sf = gt.slice(s, 0, 0, b);
        let sr = gt.slice(s, 0, b, b);
        let adv = g_adv_loss_tape(&mut gt, sr, sf, cfg.loss);
        let l1 = l1_tape(&mut gt, fake, yv);
        let weighted = gt.scale(l1, T::from_f64_lossy(cfg.lambda_l1));
        let total = gt.add(adv, weighted);
        let g_adv = finite(gt.value(adv).item().to_f64().unwrap(), "generator adversarial loss")?;
        let l1v = finite(gt.value(l1).item().to_f64().unwrap(), "L1 term")?;
        let g_loss = finite(gt.value(total).item().to_f64().unwrap(), "generator total loss")?;
        gt.backward(total)?;
        self.g.store.accumulate_grads(&gt);
        self.g.store.adam_step(lr)?;
        self.g.store.zero_grads();
        Ok(StepStats {
            g_loss,
            g_adv,
            d_loss,
            l1: l1v,
        })
    }

    /// Everything needed to resume training or run inference.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        save_generator_config(&self.g.config, &mut ck);
        save_discriminator_config(&self.d.config, &mut ck);
        ck.push_scalar("meta/lr", self.schedule.lr);
        ck.push_scalar("meta/lr_decay", self.schedule.decay);
        ck.push_scalar("meta/previous_loss", self.schedule.previous.unwrap_or(f64::NAN));
        ck.push_scalar("meta/epoch", self.epoch as f64);
        self.g.save_state(&mut ck, "g");
        self.d.save_state(&mut ck, "d");
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let gc = load_generator_config(ck)?;
        let dc = load_discriminator_config(ck)?;
        let mut gan = Gan::new(gc, dc, ck.scalar("meta/lr")?, ck.scalar("meta/lr_decay")?, 0)?;
        let prev = ck.scalar("meta/previous_loss")?;
        gan.schedule.previous = (!prev.is_nan()).then_some(prev);
        gan.epoch = ck.scalar("meta/epoch")? as usize;
        gan.g.load_state(ck, "g")?;
        gan.d.load_state(ck, "d")?;
        Ok(gan)
    }
}

const SPLIT_SALT: u64 = 0x5eed_0000_0000_0001;

/// Aligned noisy and clean waveforms.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair<T> {
    pub noisy: Vec<T>,
    pub clean: Vec<T>,
}

/// Seeded utterance-level split into sliced training examples and whole
/// validation utterances.
pub fn split_and_slice<T: Real>(utterances: &[Pair<T>], val_fraction: f64, seed: u64) -> (Vec<Pair<T>>, Vec<Pair<T>>) {
    let mut order: Vec<usize> = (0..utterances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let n_val = ((utterances.len() as f64 * val_fraction).round() as usize).min(utterances.len().saturating_sub(1));
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let mut train = Vec::new();
    for &i in &train_idx {
        let (n, c) = (
            slice_utterance(&utterances[i].noisy),
            slice_utterance(&utterances[i].clean),
        );
        train.extend(
            n.slices
                .into_iter()
                .zip(c.slices)
                .map(|(noisy, clean)| Pair { noisy, clean }),
        );
    }
    let val = val_idx.iter().map(|&i| utterances[i].clone()).collect();
    (train, val)
}

/// One line of the training report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub g_loss: f64,
    pub d_loss: f64,
    pub l1: f64,
    pub val_si_sdr: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.g_loss, self.d_loss, self.l1, self.val_si_sdr, self.lr
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            writeln!(s, "{e}").unwrap();
        }
        s
    }
}

/// Mean SI-SDR of the generator's enhancement of each pair.
pub fn mean_si_sdr<T: Real>(g: &mut Generator<T>, pairs: &[Pair<T>], batch: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for p in pairs {
        let est = g.enhance_utterance(&p.noisy, batch)?;
        let est: Vec<f64> = est.iter().map(|v| v.to_f64().unwrap()).collect();
        let clean: Vec<f64> = p.clean.iter().map(|v| v.to_f64().unwrap()).collect();
        total += si_sdr(&est, &clean)?;
    }
    Ok(total / pairs.len() as f64)
}

fn stack<T: Real>(items: &[&Vec<T>]) -> Result<Tensor<T>> {
    let len = items[0].len();
    let flat: Vec<T> = items.iter().flat_map(|v| v.iter().copied()).collect();
    Tensor::from_vec(&[items.len(), len], flat)
}

/// Runs `cfg.epochs` epochs over `train`, calling `on_epoch` after each.
///
/// Batches are drawn from a per-epoch seeded shuffle. After every epoch
/// both learning rates decay if the mean generator loss rose.
pub fn train_loop<T: Real>(
    gan: &mut Gan<T>,
    train: &[Pair<T>],
    val: &[Pair<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Gan<T>, &EpochRecord) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Degenerate("training set is empty".into()));
    }
    let mut report = TrainReport::default();
    for _ in 0..cfg.epochs {
        let epoch = gan.epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let lr = gan.schedule.lr;
        let (mut g, mut d, mut l1, mut n) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let noisy: Vec<&Vec<T>> = chunk.iter().map(|&i| &train[i].noisy).collect();
            let clean: Vec<&Vec<T>> = chunk.iter().map(|&i| &train[i].clean).collect();
            let stats = gan.train_step(&stack(&noisy)?, &stack(&clean)?, cfg)?;
            g += stats.g_loss;
            d += stats.d_loss;
            l1 += stats.l1;
            n += 1;
        }
        let nf = n as f64;
        let record = EpochRecord {
            epoch,
            g_loss: g / nf,
            d_loss: d / nf,
            l1: l1 / nf,
            val_si_sdr: mean_si_sdr(&mut gan.g, val, cfg.batch_size)?,
            lr,
        };
        gan.schedule.observe(record.g_loss);
        gan.epoch += 1;
        report.epochs.push(record);
        on_epoch(gan, &record)?;
    }
    Ok(report)
}
