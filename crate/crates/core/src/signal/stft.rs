//! Short-time Fourier analysis and overlap-add synthesis realized as matrix
//! products with fixed Fourier-basis kernels.
//!
//! Only bins `1..=fft_len/2` are kept. At synthesis the missing DC bin is
//! recovered from the zero-padded tail of each frame: the analysis frame is
//! zero on `[win_len, fft_len)`, so the DC term is whatever constant makes the
//! reconstructed tail vanish. This needs `win_len < fft_len`; otherwise the DC
//! bin is taken as zero.

use std::f64::consts::PI;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Real, Tensor};

/// Frame geometry and analysis/synthesis window.
#[derive(Clone, Debug, PartialEq)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    /// Periodic square-root Hann window of length `win_len`.
    pub window: Vec<f64>,
}

impl StftConfig {
    pub fn new(win_len: usize, hop: usize, fft_len: usize) -> Result<Self> {
        if hop == 0 || hop > win_len || win_len > fft_len || fft_len % 2 != 0 {
            return Err(Error::Config(format!(
                "need 0 < hop <= win_len <= fft_len with even fft_len, got hop {hop}, win {win_len}, fft {fft_len}"
            )));
        }
        let window = (0..win_len)
            .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / win_len as f64).cos()).sqrt())
            .collect();
        let cfg = StftConfig {
            win_len,
            hop,
            fft_len,
            window,
        };
        let sums = cfg.overlap_sums();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        if sums.iter().any(|s| (s - mean).abs() > 1e-6 * mean) {
            return Err(Error::Config(format!(
                "window of length {win_len} is not overlap-add constant at hop {hop}"
            )));
        }
        Ok(cfg)
    }

    /// 25 ms window, 6.25 ms hop, 512-point transform at 16 kHz.
    pub fn paper() -> Self {
        Self::new(400, 100, 512).unwrap()
    }

    /// 64-bin front end for desk-scale runs; frames tile 16000 samples exactly.
    pub fn toy() -> Self {
        Self::new(100, 50, 128).unwrap()
    }

    pub fn bins(&self) -> usize {
        self.fft_len / 2
    }

    /// Number of whole frames in `len` samples.
    pub fn frames(&self, len: usize) -> Result<usize> {
        if len < self.win_len {
            return Err(Error::Length(format!(
                "signal of {len} samples is shorter than one {}-sample window",
                self.win_len
            )));
        }
        Ok((len - self.win_len) / self.hop + 1)
    }

    /// `Σ_k w²[n + k·hop]` for each phase `n` in one hop.
    fn overlap_sums(&self) -> Vec<f64> {
        (0..self.hop)
            .map(|n| self.window.iter().skip(n).step_by(self.hop).map(|w| w * w).sum())
            .collect()
    }

    /// Constant value of the squared-window overlap sum.
    pub fn ola_gain(&self) -> f64 {
        let s = self.overlap_sums();
        s.iter().sum::<f64>() / s.len() as f64
    }
}

/// Precomputed basis matrices for one [`StftConfig`].
#[derive(Clone, Debug)]
pub struct StftPlan<T> {
    cfg: StftConfig,
    /// `[2·bins, win]`: real rows then imaginary rows, window folded in.
    analysis: Tensor<T>,
    /// `[2·bins, win]`: maps stacked re/im bins to one windowed output frame.
    synthesis: Tensor<T>,
}

/// `exp(-2πj·k·n/N)` angle with the product reduced modulo `N` first.
fn angle(k: usize, n: usize, fft: usize) -> f64 {
    2.0 * PI * ((k * n) % fft) as f64 / fft as f64
}

impl<T: Real> StftPlan<T> {
    pub fn new(cfg: &StftConfig) -> Self {
        let (bins, win, fft) = (cfg.bins(), cfg.win_len, cfg.fft_len);
        let mut analysis = vec![0.0; 2 * bins * win];
        for b in 0..bins {
            let k = b + 1;
            for n in 0..win {
                let a = angle(k, n, fft);
                analysis[b * win + n] = cfg.window[n] * a.cos();
                analysis[(bins + b) * win + n] = -cfg.window[n] * a.sin();
            }
        }

        // inverse DFT of a conjugate-symmetric spectrum without its DC term,
        // evaluated over the whole transform length
        let mut full = vec![0.0; 2 * bins * fft];
        let inv = 1.0 / fft as f64;
        for b in 0..bins {
            let k = b + 1;
            let weight = if k == bins { inv } else { 2.0 * inv };
            for n in 0..fft {
                let a = angle(k, n, fft);
                full[b * fft + n] = weight * a.cos();
                full[(bins + b) * fft + n] = if k == bins { 0.0 } else { -weight * a.sin() };
            }
        }
        let gain = 1.0 / cfg.ola_gain();
        let mut synthesis = vec![0.0; 2 * bins * win];
        for (row, frame) in full.chunks(fft).enumerate() {
            let dc = if win < fft {
                frame[win..].iter().sum::<f64>() / (fft - win) as f64
            } else {
                0.0
            };
            for n in 0..win {
                synthesis[row * win + n] = (frame[n] - dc) * cfg.window[n] * gain;
            }
        }

        StftPlan {
            cfg: cfg.clone(),
            analysis: Tensor::from_f64(&[2 * bins, win], &analysis).unwrap(),
            synthesis: Tensor::from_f64(&[2 * bins, win], &synthesis).unwrap(),
        }
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Spectrum `[bins, frames]` of a single waveform.
    pub fn forward(&self, x: &[T]) -> Result<ComplexTensor<T>> {
        let frames = self.cfg.frames(x.len())?;
        let (bins, win) = (self.cfg.bins(), self.cfg.win_len);
        let framed = frame_signal(x, 1, x.len(), win, self.cfg.hop, frames);
        let mut out = vec![T::zero(); 2 * bins * frames];
        T::gemm(
            false,
            true,
            2 * bins,
            win,
            frames,
            T::one(),
            self.analysis.data(),
            &framed,
            T::zero(),
            &mut out,
        );
        let im = out.split_off(bins * frames);
        ComplexTensor::new(
            Tensor::from_vec(&[bins, frames], out)?,
            Tensor::from_vec(&[bins, frames], im)?,
        )
    }

    /// Waveform of `out_len` samples from a `[bins, frames]` spectrum.
    pub fn inverse(&self, spec: &ComplexTensor<T>, out_len: usize) -> Result<Vec<T>> {
        let bins = self.cfg.bins();
        let frames = self.cfg.frames(out_len)?;
        if spec.shape() != [bins, frames] {
            return Err(Error::dims("istft", spec.shape(), &[bins, frames]));
        }
        let win = self.cfg.win_len;
        let mut stacked = spec.re.data().to_vec();
        stacked.extend_from_slice(spec.im.data());
        let mut framed = vec![T::zero(); frames * win];
        T::gemm(
            true,
            false,
            frames,
            2 * bins,
            win,
            T::one(),
            &stacked,
            self.synthesis.data(),
            T::zero(),
            &mut framed,
        );
        Ok(overlap_add(&framed, 1, out_len, win, self.cfg.hop, frames))
    }
}

/// Stacks the frames of each of `batch` signals of length `len` into
/// `[batch·frames, win]`.
fn frame_signal<T: Real>(x: &[T], batch: usize, len: usize, win: usize, hop: usize, frames: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * frames * win);
    for b in 0..batch {
        let sig = &x[b * len..(b + 1) * len];
        for t in 0..frames {
            out.extend_from_slice(&sig[t * hop..t * hop + win]);
        }
    }
    out
}

/// Adjoint of [`frame_signal`]: sums frames back onto `[batch, len]`.
fn overlap_add<T: Real>(framed: &[T], batch: usize, len: usize, win: usize, hop: usize, frames: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * len];
    for b in 0..batch {
        let sig = &mut out[b * len..(b + 1) * len];
        for t in 0..frames {
            let src = &framed[(b * frames + t) * win..(b * frames + t + 1) * win];
            for (o, &v) in sig[t * hop..t * hop + win].iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    out
}

/// Spectrum `[bins, frames]` of `x`.
pub fn stft<T: Real>(x: &[T], cfg: &StftConfig) -> Result<ComplexTensor<T>> {
    StftPlan::new(cfg).forward(x)
}

/// Inverse of [`stft`] producing `out_len` samples.
pub fn istft<T: Real>(spec: &ComplexTensor<T>, cfg: &StftConfig, out_len: usize) -> Result<Vec<T>> {
    StftPlan::new(cfg).inverse(spec, out_len)
}

impl<T: Real> Tape<T> {
    /// Cuts `x: [B, L]` into `[B·frames, win]`.
    pub fn frame_signal(&mut self, x: Var, win: usize, hop: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2, "frame_signal expects [B, L]");
        let (batch, len) = (s[0], s[1]);
        assert!(len >= win, "frame_signal: signal shorter than window");
        let frames = (len - win) / hop + 1;
        let value = frame_signal(self.value(x).data(), batch, len, win, hop, frames);
        let value = Tensor::from_vec(&[batch * frames, win], value).unwrap();
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| {
                let g = overlap_add(ctx.grad.data(), batch, len, win, hop, frames);
                vec![Some(Tensor::from_vec(&[batch, len], g).unwrap())]
            }),
        )
    }

    /// Sums `[B·frames, win]` frames into `[B, len]` signals.
    pub fn overlap_add(&mut self, framed: Var, batch: usize, len: usize, hop: usize) -> Var {
        let s = self.shape(framed).to_vec();
        let win = s[1];
        let frames = (len - win) / hop + 1;
        assert_eq!(s[0], batch * frames, "overlap_add: frame count");
        let value = overlap_add(self.value(framed).data(), batch, len, win, hop, frames);
        let value = Tensor::from_vec(&[batch, len], value).unwrap();
        self.push_op(
            value,
            &[framed],
            Box::new(move |ctx| {
                let g = frame_signal(ctx.grad.data(), batch, len, win, hop, frames);
                vec![Some(Tensor::from_vec(&[batch * frames, win], g).unwrap())]
            }),
        )
    }

    /// Differentiable analysis of `x: [B, L]` into real and imaginary planes,
    /// each `[1, B, bins, frames]`.
    pub fn stft(&mut self, x: Var, plan: &StftPlan<T>) -> (Var, Var) {
        let batch = self.shape(x)[0];
        let cfg = plan.config();
        let bins = cfg.bins();
        let framed = self.frame_signal(x, cfg.win_len, cfg.hop);
        let frames = self.shape(framed)[0] / batch;
        let basis = self.input(plan.analysis.clone());
        let spec = self.matmul(framed, basis, false, true);
        let spec = self.reshape(spec, &[batch, frames, 2, bins]);
        let spec = self.permute(spec, &[2, 0, 3, 1]);
        let re = self.slice(spec, 0, 0, 1);
        let im = self.slice(spec, 0, 1, 1);
        (re, im)
    }

    /// Differentiable synthesis of `[1, B, bins, frames]` planes into
    /// `[B, out_len]` waveforms.
    pub fn istft(&mut self, re: Var, im: Var, plan: &StftPlan<T>, out_len: usize) -> Var {
        let s = self.shape(re).to_vec();
        let (batch, bins, frames) = (s[1], s[2], s[3]);
        let cfg = plan.config();
        assert_eq!(bins, cfg.bins(), "istft: bin count");
        let spec = self.concat(&[re, im], 0);
        let spec = self.permute(spec, &[1, 3, 0, 2]);
        let spec = self.reshape(spec, &[batch * frames, 2 * bins]);
        let basis = self.input(plan.synthesis.clone());
        let framed = self.matmul(spec, basis, false, false);
        self.overlap_add(framed, batch, out_len, cfg.hop)
    }
}
