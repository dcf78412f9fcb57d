//! Real and complex (bidirectional) LSTM stacks over `[T, B, features]`.
//!
//! The complex LSTM runs two real LSTMs, `lstm_r` and `lstm_i`, on both
//! input planes and combines the four outputs as
//! `re = r(X) − i(Y)`, `im = r(Y) ∓ i(X)`.

use rand::Rng;

use super::{uniform, CVar, Ctx};
use crate::autodiff::{LstmWeights, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore};
use crate::tensor::{ComplexTensor, Real, Tensor};

/// Sign of the `i(X)` term in the imaginary output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ImagSign {
    /// `im = r(Y) − i(X)`.
    #[default]
    Minus,
    /// `im = r(Y) + i(X)`, as complex multiplication would give.
    Plus,
}

/// Runs stacked layers; each layer holds one (forward) or two (forward,
/// reverse) directions whose outputs are concatenated on the feature axis.
fn run_stack<T: Real>(tape: &mut Tape<T>, x: Var, layers: &[Vec<LstmWeights>]) -> Var {
    let mut h = x;
    for dirs in layers {
        let outs: Vec<Var> = dirs.iter().enumerate().map(|(d, w)| tape.lstm(h, *w, d == 1)).collect();
        h = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat(&outs, 2)
        };
    }
    h
}

fn combine<T: Real>(tape: &mut Tape<T>, vr: Var, vi: Var, batch: usize, sign: ImagSign) -> CVar {
    let v_rr = tape.slice(vr, 1, 0, batch);
    let v_ri = tape.slice(vr, 1, batch, batch);
    let v_ir = tape.slice(vi, 1, 0, batch);
    let v_ii = tape.slice(vi, 1, batch, batch);
    let re = tape.sub(v_rr, v_ii);
    let im = match sign {
        ImagSign::Minus => tape.sub(v_ri, v_ir),
        ImagSign::Plus => tape.add(v_ri, v_ir),
    };
    CVar { re, im }
}

/// Both planes go through each real LSTM as one doubled batch.
fn complex_stack<T: Real>(
    tape: &mut Tape<T>,
    x: CVar,
    r: &[Vec<LstmWeights>],
    i: &[Vec<LstmWeights>],
    sign: ImagSign,
) -> CVar {
    let batch = tape.shape(x.re)[1];
    let mut h = x;
    for (lr, li) in r.iter().zip(i) {
        let xy = tape.concat(&[h.re, h.im], 1);
        let vr = run_stack(tape, xy, std::slice::from_ref(lr));
        let vi = run_stack(tape, xy, std::slice::from_ref(li));
        h = combine(tape, vr, vi, batch, sign);
    }
    h
}

#[derive(Clone, Debug)]
struct LstmDir {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

/// One LSTM layer, optionally bidirectional.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    dirs: Vec<LstmDir>,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let n_dirs = if bidirectional { 2 } else { 1 };
        let dirs = (0..n_dirs)
            .map(|d| {
                let tag = if d == 0 { "fwd" } else { "bwd" };
                LstmDir {
                    w_ih: store.add(format!("{name}/{tag}/w_ih"), uniform(rng, &[4 * hidden, input], bound)),
                    w_hh: store.add(format!("{name}/{tag}/w_hh"), uniform(rng, &[4 * hidden, hidden], bound)),
                    bias: store.add(format!("{name}/{tag}/bias"), uniform(rng, &[4 * hidden], bound)),
                }
            })
            .collect();
        LstmLayer { dirs, input, hidden }
    }

    pub fn out_features(&self) -> usize {
        self.hidden * self.dirs.len()
    }

    fn weights<T: Real>(&self, ctx: &mut Ctx<'_, T>) -> Vec<LstmWeights> {
        self.dirs
            .iter()
            .map(|d| LstmWeights {
                w_ih: ctx.param(d.w_ih),
                w_hh: ctx.param(d.w_hh),
                bias: ctx.param(d.bias),
            })
            .collect()
    }
}

fn stack<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    input: usize,
    hidden: usize,
    layers: usize,
    bidirectional: bool,
    rng: &mut impl Rng,
) -> Vec<LstmLayer> {
    let mut out: Vec<LstmLayer> = Vec::with_capacity(layers);
    for l in 0..layers {
        let inp = out.last().map_or(input, |p| p.out_features());
        out.push(LstmLayer::new(
            store,
            &format!("{name}/{l}"),
            inp,
            hidden,
            bidirectional,
            rng,
        ));
    }
    out
}

/// Stacked real LSTM.
#[derive(Clone, Debug)]
pub struct RealLstm {
    pub layers: Vec<LstmLayer>,
}

impl RealLstm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        RealLstm {
            layers: stack(store, name, input, hidden, layers, false, rng),
        }
    }

    pub fn out_features(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_features())
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Var {
        let w: Vec<Vec<LstmWeights>> = self.layers.iter().map(|l| l.weights(ctx)).collect();
        run_stack(ctx.tape, x, &w)
    }
}

/// Stacked complex LSTM, optionally bidirectional.
#[derive(Clone, Debug)]
pub struct ComplexLstm {
    pub r: Vec<LstmLayer>,
    pub i: Vec<LstmLayer>,
    pub sign: ImagSign,
}

impl ComplexLstm {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        bidirectional: bool,
        sign: ImagSign,
        rng: &mut impl Rng,
    ) -> Self {
        ComplexLstm {
            r: stack(store, &format!("{name}/r"), input, hidden, layers, bidirectional, rng),
            i: stack(store, &format!("{name}/i"), input, hidden, layers, bidirectional, rng),
            sign,
        }
    }

    pub fn out_features(&self) -> usize {
        self.r.last().map_or(0, |l| l.out_features())
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: CVar) -> CVar {
        let r: Vec<Vec<LstmWeights>> = self.r.iter().map(|l| l.weights(ctx)).collect();
        let i: Vec<Vec<LstmWeights>> = self.i.iter().map(|l| l.weights(ctx)).collect();
        complex_stack(ctx.tape, x, &r, &i, self.sign)
    }
}

/// Plain-tensor weights of one LSTM direction.
#[derive(Clone, Debug)]
pub struct LstmTensors<T> {
    /// `[4H, In]`, gates ordered input, forget, candidate, output.
    pub w_ih: Tensor<T>,
    /// `[4H, H]`
    pub w_hh: Tensor<T>,
    /// `[4H]`
    pub bias: Tensor<T>,
}

impl<T: Real> LstmTensors<T> {
    fn vars(&self, tape: &mut Tape<T>) -> LstmWeights {
        LstmWeights {
            w_ih: tape.input(self.w_ih.clone()),
            w_hh: tape.input(self.w_hh.clone()),
            bias: tape.input(self.bias.clone()),
        }
    }

    fn check(&self, input: usize) -> Result<usize> {
        let h4 = self.w_ih.shape()[0];
        if h4 % 4 != 0
            || self.w_ih.shape() != [h4, input]
            || self.w_hh.shape() != [h4, h4 / 4]
            || self.bias.shape() != [h4]
        {
            return Err(Error::dims("lstm weights", self.w_ih.shape(), &[h4, input]));
        }
        Ok(h4 / 4)
    }
}

/// Checks a stack against the input width and returns the output width.
fn check_stack<T: Real>(layers: &[Vec<LstmTensors<T>>], input: usize) -> Result<usize> {
    let mut width = input;
    for dirs in layers {
        if dirs.is_empty() || dirs.len() > 2 {
            return Err(Error::Config(format!(
                "an LSTM layer has 1 or 2 directions, got {}",
                dirs.len()
            )));
        }
        let mut out = 0;
        for d in dirs {
            out += d.check(width)?;
        }
        width = out;
    }
    Ok(width)
}

fn as_sequence<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, bool)> {
    match x.rank() {
        3 => Ok((x.clone(), false)),
        2 => Ok((x.reshaped(&[x.shape()[0], 1, x.shape()[1]])?, true)),
        _ => Err(Error::shape(
            "lstm input",
            format!("expected [T, feat] or [T, B, feat], got {:?}", x.shape()),
        )),
    }
}

fn from_sequence<T: Real>(y: Tensor<T>, squeeze: bool) -> Tensor<T> {
    if squeeze {
        let s = y.shape().to_vec();
        y.reshape(&[s[0], s[2]]).unwrap()
    } else {
        y
    }
}

/// Stacked real LSTM over `[T, feat]` (or `[T, B, feat]`); each entry of
/// `layers` holds one or two directions.
pub fn real_lstm<T: Real>(seq: &Tensor<T>, layers: &[Vec<LstmTensors<T>>]) -> Result<Tensor<T>> {
    let (x, squeeze) = as_sequence(seq)?;
    check_stack(layers, x.shape()[2])?;
    let mut tape = Tape::new();
    let w: Vec<Vec<LstmWeights>> = layers
        .iter()
        .map(|d| d.iter().map(|t| t.vars(&mut tape)).collect())
        .collect();
    let xv = tape.input(x);
    let y = run_stack(&mut tape, xv, &w);
    Ok(from_sequence(tape.value(y).clone(), squeeze))
}

/// Plain-tensor complex LSTM parameters.
#[derive(Clone, Debug)]
pub struct ComplexLstmParams<T> {
    pub lstm_r: Vec<Vec<LstmTensors<T>>>,
    pub lstm_i: Vec<Vec<LstmTensors<T>>>,
    pub sign: ImagSign,
}

/// Complex LSTM over `[T, feat]` (or `[T, B, feat]`) planes.
pub fn complex_lstm<T: Real>(h: &ComplexTensor<T>, p: &ComplexLstmParams<T>) -> Result<ComplexTensor<T>> {
    let (x, squeeze) = as_sequence(&h.re)?;
    let (y, _) = as_sequence(&h.im)?;
    if p.lstm_r.len() != p.lstm_i.len() {
        return Err(Error::Config("lstm_r and lstm_i need the same depth".into()));
    }
    let wr = check_stack(&p.lstm_r, x.shape()[2])?;
    let wi = check_stack(&p.lstm_i, x.shape()[2])?;
    if wr != wi {
        return Err(Error::dims("complex lstm part widths", &[wr], &[wi]));
    }
    let mut tape = Tape::new();
    let r: Vec<Vec<LstmWeights>> = p
        .lstm_r
        .iter()
        .map(|d| d.iter().map(|t| t.vars(&mut tape)).collect())
        .collect();
    let i: Vec<Vec<LstmWeights>> = p
        .lstm_i
        .iter()
        .map(|d| d.iter().map(|t| t.vars(&mut tape)).collect())
        .collect();
    let hv = CVar {
        re: tape.input(x),
        im: tape.input(y),
    };
    let out = complex_stack(&mut tape, hv, &r, &i, p.sign);
    ComplexTensor::new(
        from_sequence(tape.value(out.re).clone(), squeeze),
        from_sequence(tape.value(out.im).clone(), squeeze),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::testing::*;

    fn weights(seed: u64, input: usize, hidden: usize) -> LstmTensors<f64> {
        LstmTensors {
            w_ih: random(seed, &[4 * hidden, input]),
            w_hh: random(seed + 1, &[4 * hidden, hidden]),
            bias: random(seed + 2, &[4 * hidden]),
        }
    }

    fn zero_weights(input: usize, hidden: usize) -> LstmTensors<f64> {
        LstmTensors {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    /// One direction, one sequence, every gate written out.
    fn scalar_lstm(x: &[Vec<f64>], w: &LstmTensors<f64>, reverse: bool) -> Vec<Vec<f64>> {
        let h_n = w.w_hh.shape()[1];
        let input = w.w_ih.shape()[1];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = vec![0.0; h_n];
        let mut c = vec![0.0; h_n];
        let mut out = vec![vec![0.0; h_n]; x.len()];
        let steps: Vec<usize> = if reverse {
            (0..x.len()).rev().collect()
        } else {
            (0..x.len()).collect()
        };
        for t in steps {
            let pre = |gate: usize, u: usize| {
                let row = gate * h_n + u;
                let mut z = w.bias.data()[row];
                for k in 0..input {
                    z += w.w_ih.data()[row * input + k] * x[t][k];
                }
                for k in 0..h_n {
                    z += w.w_hh.data()[row * h_n + k] * h[k];
                }
                z
            };
            let gates: Vec<[f64; 4]> = (0..h_n)
                .map(|u| [sig(pre(0, u)), sig(pre(1, u)), pre(2, u).tanh(), sig(pre(3, u))])
                .collect();
            for u in 0..h_n {
                let [i, f, g, o] = gates[u];
                c[u] = f * c[u] + i * g;
                h[u] = o * c[u].tanh();
            }
            out[t] = h.clone();
        }
        out
    }

    fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
        let w = t.shape()[t.rank() - 1];
        t.data().chunks(w).map(|c| c.to_vec()).collect()
    }

    #[test]
    fn real_lstm_matches_scalar_oracle() {
        for seed in 0..5 {
            let x = random(seed, &[3, 5]);
            let w = weights(seed + 10, 5, 4);
            let y = real_lstm(&x, &[vec![w.clone()]]).unwrap();
            let oracle = scalar_lstm(&rows(&x), &w, false);
            for (a, b) in rows(&y).iter().flatten().zip(oracle.iter().flatten()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let x = Tensor::zeros(&[4, 3]);
        let mut w = weights(1, 3, 2);
        w.bias = Tensor::zeros(&[8]);
        let y = real_lstm(&x, &[vec![w]]).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn saturated_forget_gate_holds_cell() {
        // forget ≈ 1, input ≈ 0, output ≈ 1 after one step that loads the cell
        let (input, hidden) = (1, 1);
        let mut w = zero_weights(input, hidden);
        w.bias.data_mut().copy_from_slice(&[-50.0, 50.0, 0.0, 50.0]);
        w.w_ih.data_mut()[0] = 100.0;
        w.w_ih.data_mut()[2] = 10.0;
        let x = Tensor::from_vec(&[4, 1], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = real_lstm(&x, &[vec![w]]).unwrap();
        let first = y.data()[1];
        assert!(first > 0.5);
        assert!(y.data()[1..].iter().all(|&v| (v - first).abs() < 1e-12));
    }

    #[test]
    fn complex_lstm_with_zero_imaginary_part_is_planewise() {
        let x = random(20, &[3, 2]);
        let y = random(21, &[3, 2]);
        let wr = weights(22, 2, 4);
        let p = ComplexLstmParams {
            lstm_r: vec![vec![wr.clone()]],
            lstm_i: vec![vec![zero_weights(2, 4)]],
            sign: ImagSign::Minus,
        };
        let out = complex_lstm(&ComplexTensor::new(x.clone(), y.clone()).unwrap(), &p).unwrap();
        assert_eq!(out.re, real_lstm(&x, &[vec![wr.clone()]]).unwrap());
        assert_eq!(out.im, real_lstm(&y, &[vec![wr]]).unwrap());
    }

    #[test]
    fn complex_lstm_matches_scalar_oracle_in_both_signs() {
        for (seed, sign) in [(30, ImagSign::Minus), (40, ImagSign::Plus)] {
            let x = random(seed, &[3, 2]);
            let y = random(seed + 1, &[3, 2]);
            let (wr, wi) = (weights(seed + 2, 2, 4), weights(seed + 5, 2, 4));
            let p = ComplexLstmParams {
                lstm_r: vec![vec![wr.clone()]],
                lstm_i: vec![vec![wi.clone()]],
                sign,
            };
            let out = complex_lstm(&ComplexTensor::new(x.clone(), y.clone()).unwrap(), &p).unwrap();
            let (rx, ry) = (scalar_lstm(&rows(&x), &wr, false), scalar_lstm(&rows(&y), &wr, false));
            let (ix, iy) = (scalar_lstm(&rows(&x), &wi, false), scalar_lstm(&rows(&y), &wi, false));
            let s = if sign == ImagSign::Minus { -1.0 } else { 1.0 };
            for t in 0..3 {
                for u in 0..4 {
                    assert!((out.re.data()[t * 4 + u] - (rx[t][u] - iy[t][u])).abs() < 1e-10);
                    assert!((out.im.data()[t * 4 + u] - (ry[t][u] + s * ix[t][u])).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn bidirectional_concatenates_directions() {
        let x = random(50, &[4, 3]);
        let (f, b) = (weights(51, 3, 2), weights(54, 3, 2));
        let y = real_lstm(&x, &[vec![f.clone(), b.clone()]]).unwrap();
        assert_eq!(y.shape(), &[4, 4]);
        let (of, ob) = (scalar_lstm(&rows(&x), &f, false), scalar_lstm(&rows(&x), &b, true));
        for t in 0..4 {
            let expect: Vec<f64> = of[t].iter().chain(&ob[t]).copied().collect();
            for (a, e) in y.data()[t * 4..t * 4 + 4].iter().zip(expect) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn feature_mismatch_is_a_dimension_error() {
        let err = real_lstm(&random(1, &[3, 4]), &[vec![weights(2, 5, 2)]]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn complex_stack_gradcheck() {
        let shapes: [&[usize]; 3] = [&[8, 2], &[8, 2], &[8]];
        let mut inputs = vec![random(60, &[3, 2, 2]), random(61, &[3, 2, 2])];
        for part in 0..4 {
            for (k, s) in shapes.iter().enumerate() {
                inputs.push(random(70 + part * 3 + k as u64, s));
            }
        }
        check_gradients(&inputs, |t, v| {
            let w = |k: usize| LstmWeights {
                w_ih: v[2 + 3 * k],
                w_hh: v[3 + 3 * k],
                bias: v[4 + 3 * k],
            };
            let r = vec![vec![w(0), w(1)]];
            let i = vec![vec![w(2), w(3)]];
            let y = complex_stack(t, CVar { re: v[0], im: v[1] }, &r, &i, ImagSign::Minus);
            let a = probe_loss(t, y.re, 80);
            let b = probe_loss(t, y.im, 81);
            t.add(a, b)
        });
    }
}
