//! Complex batch normalization over the `[C, B, F, T]` feature layout.
//!
//! Statistics are per channel over batch, frequency and time.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

use super::{CVar, Ctx};

/// How the two planes are normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BatchNormMode {
    /// Real and imaginary planes standardized independently.
    #[default]
    Naive,
    /// Joint whitening with the inverse square root of the 2×2 covariance.
    Whitening,
}

/// Rows of the running-statistics table.
const MEAN_RE: usize = 0;
const MEAN_IM: usize = 1;
const VAR_RE: usize = 2;
const VAR_IM: usize = 3;
const COV: usize = 4;
const STAT_ROWS: usize = 5;

#[derive(Clone, Debug)]
pub struct ComplexBatchNorm<T> {
    gamma_re: ParamId,
    beta_re: ParamId,
    gamma_im: ParamId,
    beta_im: ParamId,
    pub channels: usize,
    pub mode: BatchNormMode,
    pub eps: T,
    /// Weight kept on the old running value at each update.
    pub momentum: T,
    /// `[5, C]`: mean re, mean im, var re, var im, re/im covariance.
    pub running: Tensor<T>,
    pub initialized: bool,
}

impl<T: Real> ComplexBatchNorm<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, channels: usize, mode: BatchNormMode) -> Self {
        ComplexBatchNorm {
            gamma_re: store.add(format!("{name}/gamma_re"), Tensor::ones(&[channels])),
            beta_re: store.add(format!("{name}/beta_re"), Tensor::zeros(&[channels])),
            gamma_im: store.add(format!("{name}/gamma_im"), Tensor::ones(&[channels])),
            beta_im: store.add(format!("{name}/beta_im"), Tensor::zeros(&[channels])),
            channels,
            mode,
            eps: T::from_f64_lossy(1e-5),
            momentum: T::from_f64_lossy(0.9),
            running: Tensor::zeros(&[STAT_ROWS, channels]),
            initialized: false,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.gamma_re, self.beta_re, self.gamma_im, self.beta_im]
    }

    fn stat(&self, row: usize) -> Tensor<T> {
        let c = self.channels;
        Tensor::from_vec(&[c], self.running.data()[row * c..(row + 1) * c].to_vec()).unwrap()
    }

    fn update_running(&mut self, batch: &[(usize, &Tensor<T>)]) {
        let c = self.channels;
        let keep = if self.initialized { self.momentum } else { T::zero() };
        for &(row, value) in batch {
            let dst = &mut self.running.data_mut()[row * c..(row + 1) * c];
            for (d, &v) in dst.iter_mut().zip(value.data()) {
                *d = keep * *d + (T::one() - keep) * v;
            }
        }
        self.initialized = true;
    }

    pub fn forward(&mut self, ctx: &mut Ctx<'_, T>, x: CVar) -> Result<CVar> {
        let shape = ctx.tape.shape(x.re).to_vec();
        if shape[0] != self.channels {
            return Err(Error::dims(
                "complex batch norm channels",
                &[shape[0]],
                &[self.channels],
            ));
        }
        let per_channel: usize = shape[1..].iter().product();
        let y = if ctx.training {
            if per_channel < 2 {
                return Err(Error::shape(
                    "complex batch norm",
                    "batch statistics need more than one value per channel",
                ));
            }
            self.forward_training(ctx.tape, x)
        } else {
            if !self.initialized {
                return Err(Error::Uninitialized(
                    "batch-norm running statistics used before any training batch".into(),
                ));
            }
            self.forward_eval(ctx.tape, x)
        };
        let (gr, br) = (ctx.param(self.gamma_re), ctx.param(self.beta_re));
        let (gi, bi) = (ctx.param(self.gamma_im), ctx.param(self.beta_im));
        let t = &mut *ctx.tape;
        let re = t.mul_channel(y.re, gr);
        let im = t.mul_channel(y.im, gi);
        Ok(CVar {
            re: t.add_channel(re, br),
            im: t.add_channel(im, bi),
        })
    }

    fn forward_training(&mut self, t: &mut Tape<T>, x: CVar) -> CVar {
        let c = self.channels;
        let mean_re = t.channel_mean(x.re);
        let mean_im = t.channel_mean(x.im);
        let neg_re = t.neg(mean_re);
        let neg_im = t.neg(mean_im);
        let xr = t.add_channel(x.re, neg_re);
        let xi = t.add_channel(x.im, neg_im);
        let sr = t.square(xr);
        let si = t.square(xi);
        let var_re = t.channel_mean(sr);
        let var_im = t.channel_mean(si);
        let (out, cov) = match self.mode {
            BatchNormMode::Naive => (standardize(t, xr, xi, var_re, var_im, self.eps), None),
            BatchNormMode::Whitening => {
                let p = t.mul(xr, xi);
                let cov = t.channel_mean(p);
                (whiten(t, xr, xi, var_re, var_im, cov, self.eps, c), Some(cov))
            }
        };
        let stats: Vec<(usize, Tensor<T>)> = [
            (MEAN_RE, mean_re),
            (MEAN_IM, mean_im),
            (VAR_RE, var_re),
            (VAR_IM, var_im),
        ]
        .into_iter()
        .chain(cov.map(|v| (COV, v)))
        .map(|(row, v)| (row, t.value(v).clone()))
        .collect();
        let refs: Vec<(usize, &Tensor<T>)> = stats.iter().map(|(r, v)| (*r, v)).collect();
        self.update_running(&refs);
        out
    }

    fn forward_eval(&self, t: &mut Tape<T>, x: CVar) -> CVar {
        let c = self.channels;
        let neg_re = t.input(self.stat(MEAN_RE).scale(-T::one()));
        let neg_im = t.input(self.stat(MEAN_IM).scale(-T::one()));
        let xr = t.add_channel(x.re, neg_re);
        let xi = t.add_channel(x.im, neg_im);
        let var_re = t.input(self.stat(VAR_RE));
        let var_im = t.input(self.stat(VAR_IM));
        match self.mode {
            BatchNormMode::Naive => standardize(t, xr, xi, var_re, var_im, self.eps),
            BatchNormMode::Whitening => {
                let cov = t.input(self.stat(COV));
                whiten(t, xr, xi, var_re, var_im, cov, self.eps, c)
            }
        }
    }
}

fn inv_sqrt<T: Real>(t: &mut Tape<T>, v: Var, eps: T) -> Var {
    let c = t.shape(v)[0];
    let shifted = t.add_scalar(v, eps);
    let s = t.sqrt(shifted);
    let one = t.input(Tensor::ones(&[c]));
    t.div(one, s)
}

fn standardize<T: Real>(t: &mut Tape<T>, xr: Var, xi: Var, var_re: Var, var_im: Var, eps: T) -> CVar {
    let ir = inv_sqrt(t, var_re, eps);
    let ii = inv_sqrt(t, var_im, eps);
    CVar {
        re: t.mul_channel(xr, ir),
        im: t.mul_channel(xi, ii),
    }
}

/// Multiplies centred planes by `V^{-1/2}` with
/// `V = [[Vrr+ε, Vri], [Vri, Vii+ε]]`, using the closed form
/// `V^{-1/2} = (V + sI) / (s·t)`, `s = √det V`, `t = √(tr V + 2s)`,
/// so the off-diagonal entry is `Vri/(s·t)` and enters with a minus sign
/// in the inverse.
#[allow(clippy::too_many_arguments)]
fn whiten<T: Real>(t: &mut Tape<T>, xr: Var, xi: Var, vrr: Var, vii: Var, vri: Var, eps: T, c: usize) -> CVar {
    let a = t.add_scalar(vrr, eps);
    let d = t.add_scalar(vii, eps);
    let ad = t.mul(a, d);
    let bb = t.square(vri);
    let det = t.sub(ad, bb);
    let s = t.sqrt(det);
    let tr = t.add(a, d);
    let two_s = t.scale(s, T::from_f64_lossy(2.0));
    let tr2 = t.add(tr, two_s);
    let tt = t.sqrt(tr2);
    let st = t.mul(s, tt);
    let one = t.input(Tensor::ones(&[c]));
    let k = t.div(one, st);
    let d_s = t.add(d, s);
    let a_s = t.add(a, s);
    let w_rr = t.mul(d_s, k);
    let w_ii = t.mul(a_s, k);
    let vk = t.mul(vri, k);
    let w_ri = t.neg(vk);
    let rr = t.mul_channel(xr, w_rr);
    let ri = t.mul_channel(xi, w_ri);
    let ir = t.mul_channel(xr, w_ri);
    let ii = t.mul_channel(xi, w_ii);
    CVar {
        re: t.add(rr, ri),
        im: t.add(ir, ii),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::testing::*;

    fn run(
        bn: &mut ComplexBatchNorm<f64>,
        store: &ParamStore<f64>,
        x: &Tensor<f64>,
        y: &Tensor<f64>,
        training: bool,
    ) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let mut tape = Tape::new();
        let mut ctx = Ctx {
            tape: &mut tape,
            store,
            trainable: false,
            training,
        };
        let h = CVar {
            re: ctx.tape.input(x.clone()),
            im: ctx.tape.input(y.clone()),
        };
        let out = bn.forward(&mut ctx, h)?;
        Ok((tape.value(out.re).clone(), tape.value(out.im).clone()))
    }

    fn moments(x: &Tensor<f64>, c: usize) -> Vec<(f64, f64)> {
        let inner = x.len() / c;
        x.data()
            .chunks(inner)
            .map(|ch| {
                let m = ch.iter().sum::<f64>() / inner as f64;
                let v = ch.iter().map(|a| (a - m).powi(2)).sum::<f64>() / inner as f64;
                (m, v)
            })
            .collect()
    }

    #[test]
    fn training_output_is_standardized() {
        let mut store = ParamStore::new();
        let mut bn = ComplexBatchNorm::new(&mut store, "bn", 3, BatchNormMode::Naive);
        bn.eps = 0.0;
        let x = random(1, &[3, 2, 4, 5]).map(|v| 3.0 * v + 1.0);
        let y = random(2, &[3, 2, 4, 5]);
        let (re, im) = run(&mut bn, &store, &x, &y, true).unwrap();
        for (m, v) in moments(&re, 3).into_iter().chain(moments(&im, 3)) {
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_input_gives_beta() {
        let mut store = ParamStore::new();
        let mut bn = ComplexBatchNorm::new(&mut store, "bn", 2, BatchNormMode::Naive);
        let beta = store.find("bn/beta_re").unwrap();
        *store.value_mut(beta) = Tensor::from_vec(&[2], vec![0.5, -1.5]).unwrap();
        let x = Tensor::full(&[2, 1, 3, 2], 4.0);
        let (re, im) = run(&mut bn, &store, &x, &x, true).unwrap();
        assert!(re.data()[..6].iter().all(|&v| v == 0.5));
        assert!(re.data()[6..].iter().all(|&v| v == -1.5));
        assert!(im.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_input_is_nearly_identity() {
        let mut store = ParamStore::new();
        let mut bn = ComplexBatchNorm::new(&mut store, "bn", 1, BatchNormMode::Naive);
        let raw = random(3, &[1, 1, 10, 10]);
        let (m, v) = moments(&raw, 1)[0];
        let x = raw.map(|a| (a - m) / v.sqrt());
        let (re, _) = run(&mut bn, &store, &x, &x, true).unwrap();
        assert!(re.max_abs_diff(&x) < 1e-4);
        bn.eps = 0.0;
        let (re, _) = run(&mut bn, &store, &x, &x, true).unwrap();
        assert!(re.max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn eval_before_training_is_uninitialized() {
        let mut store = ParamStore::new();
        let mut bn = ComplexBatchNorm::new(&mut store, "bn", 1, BatchNormMode::Naive);
        let x = random(4, &[1, 1, 2, 2]);
        assert!(matches!(
            run(&mut bn, &store, &x, &x, false),
            Err(Error::Uninitialized(_))
        ));
        run(&mut bn, &store, &x, &x, true).unwrap();
        run(&mut bn, &store, &x, &x, false).unwrap();
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut store = ParamStore::new();
        let mut bn = ComplexBatchNorm::new(&mut store, "bn", 1, BatchNormMode::Naive);
        let a = Tensor::full(&[1, 1, 2, 2], 1.0);
        let b = Tensor::full(&[1, 1, 2, 2], 3.0);
        run(&mut bn, &store, &a, &a, true).unwrap();
        assert_eq!(bn.running.data()[MEAN_RE], 1.0);
        run(&mut bn, &store, &b, &b, true).unwrap();
        assert!((bn.running.data()[MEAN_RE] - 1.2).abs() < 1e-12);
        // eval with the running statistics is a fixed affine map
        let (re, _) = run(&mut bn, &store, &b, &b, false).unwrap();
        let expect = (3.0 - 1.2) / (0.0f64 + 1e-5).sqrt();
        assert!((re.data()[0] - expect).abs() < 1e-6 * expect);
    }

    #[test]
    fn whitening_decorrelates_planes() {
        let mut store = ParamStore::new();
        let mut bn = ComplexBatchNorm::new(&mut store, "bn", 2, BatchNormMode::Whitening);
        bn.eps = 0.0;
        let x = random(5, &[2, 2, 5, 4]);
        let n = random(6, &[2, 2, 5, 4]);
        let y = x.zip_map(&n, |a, b| 0.8 * a + 0.3 * b).unwrap();
        let (re, im) = run(&mut bn, &store, &x, &y, true).unwrap();
        let inner = 40;
        for ch in 0..2 {
            let r = &re.data()[ch * inner..(ch + 1) * inner];
            let i = &im.data()[ch * inner..(ch + 1) * inner];
            let vrr = r.iter().map(|v| v * v).sum::<f64>() / inner as f64;
            let vii = i.iter().map(|v| v * v).sum::<f64>() / inner as f64;
            let vri = r.iter().zip(i).map(|(a, b)| a * b).sum::<f64>() / inner as f64;
            assert!((vrr - 1.0).abs() < 1e-8 && (vii - 1.0).abs() < 1e-8 && vri.abs() < 1e-8);
        }
    }

    #[test]
    fn batch_norm_gradcheck() {
        for mode in [BatchNormMode::Naive, BatchNormMode::Whitening] {
            check_gradients(&[random(7, &[2, 2, 3, 2]), random(8, &[2, 2, 3, 2])], |t, v| {
                let mut store = ParamStore::new();
                let mut bn = ComplexBatchNorm::new(&mut store, "bn", 2, mode);
                let mut ctx = Ctx {
                    tape: t,
                    store: &store,
                    trainable: false,
                    training: true,
                };
                let y = bn.forward(&mut ctx, CVar { re: v[0], im: v[1] }).unwrap();
                let a = probe_loss(t, y.re, 9);
                let b = probe_loss(t, y.im, 10);
                t.add(a, b)
            });
        }
    }
}
