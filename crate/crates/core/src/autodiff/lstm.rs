//! Single-layer LSTM as one tape node with a hand-written BPTT backward.
//!
//! Gate order within the `4H` rows is input, forget, candidate, output.
//! Gates use the logistic sigmoid, candidate and cell output use `tanh`.
//! The initial hidden and cell states are zero.

use super::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Tape handles of one LSTM direction's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[4H, In]`
    pub w_ih: Var,
    /// `[4H, H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> Tape<T> {
    /// Runs an LSTM over `x: [T, B, In]` and returns all hidden states
    /// `[T, B, H]`. With `reverse`, the sequence is consumed from the last
    /// step backwards and outputs stay aligned with their input steps.
    pub fn lstm(&mut self, x: Var, weights: LstmWeights, reverse: bool) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "lstm expects [T, B, In]");
        let (steps, batch, input) = (xs[0], xs[1], xs[2]);
        let wi = self.shape(weights.w_ih).to_vec();
        let h = wi[0] / 4;
        assert_eq!(wi, vec![4 * h, input], "lstm: w_ih shape");
        assert_eq!(self.shape(weights.w_hh), &[4 * h, h], "lstm: w_hh shape");
        assert_eq!(self.shape(weights.bias), &[4 * h], "lstm: bias shape");
        let g4 = 4 * h;

        let x_data = self.value(x).data();
        let w_ih = self.value(weights.w_ih).data();
        let w_hh = self.value(weights.w_hh).data();
        let bias = self.value(weights.bias).data();

        // input projections for all steps at once
        let mut pre = vec![T::zero(); steps * batch * g4];
        T::gemm(
            false,
            true,
            steps * batch,
            input,
            g4,
            T::one(),
            x_data,
            w_ih,
            T::zero(),
            &mut pre,
        );

        // activated gates and cell states, indexed by time step
        let mut gates = vec![T::zero(); steps * batch * g4];
        let mut cells = vec![T::zero(); steps * batch * h];
        let mut hidden = vec![T::zero(); steps * batch * h];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        let mut prev: Option<usize> = None;
        for &t in &order {
            let z = &mut gates[t * batch * g4..(t + 1) * batch * g4];
            z.copy_from_slice(&pre[t * batch * g4..(t + 1) * batch * g4]);
            if let Some(p) = prev {
                let hp = &hidden[p * batch * h..(p + 1) * batch * h];
                T::gemm(false, true, batch, h, g4, T::one(), hp, w_hh, T::one(), z);
            }
            for b in 0..batch {
                let zb = &mut z[b * g4..(b + 1) * g4];
                for (v, &bv) in zb.iter_mut().zip(bias) {
                    *v += bv;
                }
                for u in 0..h {
                    zb[u] = sigmoid(zb[u]);
                    zb[h + u] = sigmoid(zb[h + u]);
                    zb[2 * h + u] = zb[2 * h + u].tanh();
                    zb[3 * h + u] = sigmoid(zb[3 * h + u]);
                    let c_prev = prev.map_or(T::zero(), |p| cells[(p * batch + b) * h + u]);
                    let c = zb[h + u] * c_prev + zb[u] * zb[2 * h + u];
                    cells[(t * batch + b) * h + u] = c;
                    hidden[(t * batch + b) * h + u] = zb[3 * h + u] * c.tanh();
                }
            }
            prev = Some(t);
        }

        let value = Tensor::from_vec(&[steps, batch, h], hidden).unwrap();
        self.push_op(
            value,
            &[x, weights.w_ih, weights.w_hh, weights.bias],
            Box::new(move |ctx| {
                let dh_out = ctx.grad.data();
                let hidden = ctx.value.data();
                let (x_data, w_ih, w_hh) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.inputs[2].data());
                let mut dz = vec![T::zero(); steps * batch * g4];
                let mut dw_hh = vec![T::zero(); g4 * h];
                let mut dh_next = vec![T::zero(); batch * h];
                let mut dc_next = vec![T::zero(); batch * h];
                for (pos, &t) in order.iter().enumerate().rev() {
                    let prev = pos.checked_sub(1).map(|p| order[p]);
                    let zt = &gates[t * batch * g4..(t + 1) * batch * g4];
                    let dzt = &mut dz[t * batch * g4..(t + 1) * batch * g4];
                    for b in 0..batch {
                        for u in 0..h {
                            let k = (t * batch + b) * h + u;
                            let (i, f, g, o) = (
                                zt[b * g4 + u],
                                zt[b * g4 + h + u],
                                zt[b * g4 + 2 * h + u],
                                zt[b * g4 + 3 * h + u],
                            );
                            let tc = cells[k].tanh();
                            let dh = dh_out[k] + dh_next[b * h + u];
                            let d_o = dh * tc;
                            let dc = dh * o * (T::one() - tc * tc) + dc_next[b * h + u];
                            let c_prev = prev.map_or(T::zero(), |p| cells[(p * batch + b) * h + u]);
                            dzt[b * g4 + u] = dc * g * i * (T::one() - i);
                            dzt[b * g4 + h + u] = dc * c_prev * f * (T::one() - f);
                            dzt[b * g4 + 2 * h + u] = dc * i * (T::one() - g * g);
                            dzt[b * g4 + 3 * h + u] = d_o * o * (T::one() - o);
                            dc_next[b * h + u] = dc * f;
                        }
                    }
                    match prev {
                        Some(p) => {
                            let hp = &hidden[p * batch * h..(p + 1) * batch * h];
                            T::gemm(true, false, g4, batch, h, T::one(), dzt, hp, T::one(), &mut dw_hh);
                            T::gemm(false, false, batch, g4, h, T::one(), dzt, w_hh, T::zero(), &mut dh_next);
                        }
                        None => dh_next.iter_mut().for_each(|v| *v = T::zero()),
                    }
                }
                let rows = steps * batch;
                let dx = ctx.needs[0].then(|| {
                    let mut d = vec![T::zero(); rows * input];
                    T::gemm(false, false, rows, g4, input, T::one(), &dz, w_ih, T::zero(), &mut d);
                    Tensor::from_vec(&[steps, batch, input], d).unwrap()
                });
                let dw_ih = ctx.needs[1].then(|| {
                    let mut d = vec![T::zero(); g4 * input];
                    T::gemm(true, false, g4, rows, input, T::one(), &dz, x_data, T::zero(), &mut d);
                    Tensor::from_vec(&[g4, input], d).unwrap()
                });
                let db = ctx.needs[3].then(|| {
                    let mut d = vec![T::zero(); g4];
                    for row in dz.chunks(g4) {
                        for (a, &v) in d.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    Tensor::from_vec(&[g4], d).unwrap()
                });
                vec![
                    dx,
                    dw_ih,
                    ctx.needs[2].then(|| Tensor::from_vec(&[g4, h], dw_hh).unwrap()),
                    db,
                ]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;

    #[test]
    fn lstm_gradcheck_both_directions() {
        for reverse in [false, true] {
            let inputs = [
                random(1, &[4, 2, 3]),
                random(2, &[8, 3]),
                random(3, &[8, 2]),
                random(4, &[8]),
            ];
            check_gradients(&inputs, |t, v| {
                let w = LstmWeights {
                    w_ih: v[1],
                    w_hh: v[2],
                    bias: v[3],
                };
                let y = t.lstm(v[0], w, reverse);
                probe_loss(t, y, 9)
            });
        }
    }

    #[test]
    fn reverse_equals_forward_on_reversed_sequence() {
        let x = random(5, &[5, 1, 2]);
        let mut rev = x.clone();
        for t in 0..5 {
            rev.data_mut()[t * 2..t * 2 + 2].copy_from_slice(&x.data()[(4 - t) * 2..(4 - t) * 2 + 2]);
        }
        let mut tape = Tape::new();
        let w = LstmWeights {
            w_ih: tape.input(random(6, &[12, 2])),
            w_hh: tape.input(random(7, &[12, 3])),
            bias: tape.input(random(8, &[12])),
        };
        let (xa, xb) = (tape.input(x), tape.input(rev));
        let a = tape.lstm(xa, w, true);
        let b = tape.lstm(xb, w, false);
        for t in 0..5 {
            for u in 0..3 {
                let va = tape.value(a).data()[t * 3 + u];
                let vb = tape.value(b).data()[(4 - t) * 3 + u];
                assert!((va - vb).abs() < 1e-14);
            }
        }
    }
}
