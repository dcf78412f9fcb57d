//! Elementwise, reduction and per-channel broadcast operations.
//!
//! Channel operations treat axis 0 as the channel axis and everything after it
//! as one contiguous block per channel, which matches the `[C, B, F, T]`
//! feature layout used by the convolutional layers.

use super::{BackwardCtx, Tape, Var};
use crate::tensor::{Real, Tensor};

fn same_shape<T: Real>(tape: &Tape<T>, a: Var, b: Var, op: &str) {
    assert_eq!(tape.shape(a), tape.shape(b), "{op}: operand shapes differ");
}

fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    /// Elementwise op `y = f(x)` with derivative `df(x, y)`.
    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let value = self.value(a).map(f);
        self.push_op(
            value,
            &[a],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let x = ctx.inputs[0].data();
                let y = ctx.value.data();
                let g = ctx.grad.data();
                let out = (0..g.len()).map(|i| g[i] * df(x[i], y[i])).collect();
                vec![Some(Tensor::from_vec(ctx.grad.shape(), out).unwrap())]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "add");
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y).unwrap();
        self.push_op(
            value,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "sub");
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y).unwrap();
        self.push_op(
            value,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), ctx.needs[1].then(|| ctx.grad.map(|g| -g))]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "mul");
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y).unwrap();
        self.push_op(
            value,
            &[a, b],
            Box::new(|ctx| {
                let (x, y) = (ctx.inputs[0], ctx.inputs[1]);
                vec![
                    ctx.needs[0].then(|| ctx.grad.zip_map(y, |g, y| g * y).unwrap()),
                    ctx.needs[1].then(|| ctx.grad.zip_map(x, |g, x| g * x).unwrap()),
                ]
            }),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "div");
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y).unwrap();
        self.push_op(
            value,
            &[a, b],
            Box::new(|ctx| {
                let y = ctx.inputs[1];
                let gb = ctx.needs[1].then(|| {
                    let q = ctx.value;
                    let data = (0..q.len())
                        .map(|i| -ctx.grad.data()[i] * q.data()[i] / y.data()[i])
                        .collect();
                    Tensor::from_vec(q.shape(), data).unwrap()
                });
                vec![ctx.needs[0].then(|| ctx.grad.zip_map(y, |g, y| g / y).unwrap()), gb]
            }),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, |_, _| -T::one())
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, move |x| x + c, |_, _| T::one())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| x + x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let half = T::from_f64_lossy(0.5);
        self.unary(a, |x| x.sqrt(), move |_, y| half / y)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (T::one() - y))
    }

    /// `log(1 + e^x)`, stable for large `|x|`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, |x, _| sigmoid(x))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(
            a,
            move |x| if x >= T::zero() { x } else { slope * x },
            move |x, _| if x >= T::zero() { T::one() } else { slope },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let shape = self.shape(a).to_vec();
        self.push_op(
            value,
            &[a],
            Box::new(move |ctx| vec![Some(Tensor::full(&shape, ctx.grad.item()))]),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len()).unwrap();
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// `x + s` where `s` is a single-element tensor broadcast over `x`.
    pub fn add_broadcast_scalar(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "add_broadcast_scalar: s must be scalar");
        let c = self.value(s).item();
        let value = self.value(x).map(|v| v + c);
        self.push_op(
            value,
            &[x, s],
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad.clone()),
                    ctx.needs[1].then(|| Tensor::scalar(ctx.grad.sum())),
                ]
            }),
        )
    }

    /// Mean over everything but axis 0: `[C, ...] -> [C]`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let c = shape[0];
        let inner = self.value(x).len() / c;
        let inv = T::one() / T::from_usize(inner).unwrap();
        let data = self
            .value(x)
            .data()
            .chunks(inner)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::from_vec(&[c], data).unwrap();
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| {
                let mut out = Vec::with_capacity(c * inner);
                for &g in ctx.grad.data() {
                    out.extend(std::iter::repeat_n(g * inv, inner));
                }
                vec![Some(Tensor::from_vec(&shape, out).unwrap())]
            }),
        )
    }

    /// `x[c, ...] + b[c]`.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Var {
        let c = self.shape(x)[0];
        assert_eq!(self.shape(b), &[c], "add_channel: bias must be [C]");
        let inner = self.value(x).len() / c;
        let mut value = self.value(x).clone();
        for (ch, &bv) in value.data_mut().chunks_mut(inner).zip(self.value(b).data()) {
            ch.iter_mut().for_each(|v| *v += bv);
        }
        self.push_op(
            value,
            &[x, b],
            Box::new(move |ctx| {
                let gb = ctx.needs[1].then(|| {
                    let d = ctx
                        .grad
                        .data()
                        .chunks(inner)
                        .map(|ch| ch.iter().copied().sum())
                        .collect();
                    Tensor::from_vec(&[c], d).unwrap()
                });
                vec![ctx.needs[0].then(|| ctx.grad.clone()), gb]
            }),
        )
    }

    /// `x[c, ...] * s[c]`.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Var {
        let c = self.shape(x)[0];
        assert_eq!(self.shape(s), &[c], "mul_channel: scale must be [C]");
        let inner = self.value(x).len() / c;
        let mut value = self.value(x).clone();
        for (ch, &sv) in value.data_mut().chunks_mut(inner).zip(self.value(s).data()) {
            ch.iter_mut().for_each(|v| *v *= sv);
        }
        self.push_op(
            value,
            &[x, s],
            Box::new(move |ctx| {
                let (xv, sv) = (ctx.inputs[0], ctx.inputs[1]);
                let gx = ctx.needs[0].then(|| {
                    let mut g = ctx.grad.clone();
                    for (ch, &s) in g.data_mut().chunks_mut(inner).zip(sv.data()) {
                        ch.iter_mut().for_each(|v| *v *= s);
                    }
                    g
                });
                let gs = ctx.needs[1].then(|| {
                    let d = ctx
                        .grad
                        .data()
                        .chunks(inner)
                        .zip(xv.data().chunks(inner))
                        .map(|(g, x)| g.iter().zip(x).map(|(&g, &x)| g * x).sum())
                        .collect();
                    Tensor::from_vec(&[c], d).unwrap()
                });
                vec![gx, gs]
            }),
        )
    }

    /// `x[..., d] + b[d]`, broadcasting `b` over all leading axes.
    pub fn add_last(&mut self, x: Var, b: Var) -> Var {
        let d = *self.shape(x).last().unwrap();
        assert_eq!(self.shape(b), &[d], "add_last: bias must match the last axis");
        let mut value = self.value(x).clone();
        let bias = self.value(b).data();
        for row in value.data_mut().chunks_mut(d) {
            row.iter_mut().zip(bias).for_each(|(v, &bv)| *v += bv);
        }
        self.push_op(
            value,
            &[x, b],
            Box::new(move |ctx| {
                let gb = ctx.needs[1].then(|| {
                    let mut acc = vec![T::zero(); d];
                    for row in ctx.grad.data().chunks(d) {
                        acc.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                    }
                    Tensor::from_vec(&[d], acc).unwrap()
                });
                vec![ctx.needs[0].then(|| ctx.grad.clone()), gb]
            }),
        )
    }

    /// Parametric ReLU with one slope per channel (axis 0).
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Var {
        let c = self.shape(x)[0];
        assert_eq!(self.shape(alpha), &[c], "prelu: slope must be [C]");
        let inner = self.value(x).len() / c;
        let mut value = self.value(x).clone();
        for (ch, &a) in value.data_mut().chunks_mut(inner).zip(self.value(alpha).data()) {
            ch.iter_mut().filter(|v| **v < T::zero()).for_each(|v| *v *= a);
        }
        self.push_op(
            value,
            &[x, alpha],
            Box::new(move |ctx| {
                let (xv, av) = (ctx.inputs[0], ctx.inputs[1]);
                let gx = ctx.needs[0].then(|| {
                    let mut g = ctx.grad.clone();
                    for ((gch, xch), &a) in g
                        .data_mut()
                        .chunks_mut(inner)
                        .zip(xv.data().chunks(inner))
                        .zip(av.data())
                    {
                        for (g, &x) in gch.iter_mut().zip(xch) {
                            if x < T::zero() {
                                *g *= a;
                            }
                        }
                    }
                    g
                });
                let ga = ctx.needs[1].then(|| {
                    let d = ctx
                        .grad
                        .data()
                        .chunks(inner)
                        .zip(xv.data().chunks(inner))
                        .map(|(g, x)| {
                            g.iter()
                                .zip(x)
                                .filter(|(_, &x)| x < T::zero())
                                .map(|(&g, &x)| g * x)
                                .sum()
                        })
                        .collect();
                    Tensor::from_vec(&[c], d).unwrap()
                });
                vec![gx, ga]
            }),
        )
    }
}
