//! Dense real and complex projections over the last axis.

use rand::Rng;

use super::{uniform, CVar, Ctx};
use crate::autodiff::Var;
use crate::optim::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// `y = x Wᵀ + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Linear {
            w: store.add(format!("{name}/w"), uniform(rng, &[out_features, in_features], bound)),
            b: store.add(format!("{name}/b"), Tensor::zeros(&[out_features])),
            in_features,
            out_features,
        }
    }

    pub fn weight_id(&self) -> ParamId {
        self.w
    }

    /// Applies the projection with `w` possibly replaced (e.g. normalized).
    pub fn forward_with<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var, w: Var) -> Var {
        let s = ctx.tape.shape(x).to_vec();
        let rows = ctx.tape.value(x).len() / self.in_features;
        let flat = ctx.tape.reshape(x, &[rows, self.in_features]);
        let y = ctx.tape.matmul(flat, w, false, true);
        let b = ctx.param(self.b);
        let y = ctx.tape.add_last(y, b);
        let mut out = s;
        *out.last_mut().unwrap() = self.out_features;
        ctx.tape.reshape(y, &out)
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Var {
        let w = ctx.param(self.w);
        self.forward_with(ctx, x, w)
    }
}

/// `(X + jY)(A + jB)ᵀ + bias` over the last axis.
#[derive(Clone, Debug)]
pub struct ComplexLinear {
    a: ParamId,
    b: ParamId,
    bias_re: ParamId,
    bias_im: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl ComplexLinear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((2 * in_features) as f64).sqrt();
        ComplexLinear {
            a: store.add(format!("{name}/a"), uniform(rng, &[out_features, in_features], bound)),
            b: store.add(format!("{name}/b"), uniform(rng, &[out_features, in_features], bound)),
            bias_re: store.add(format!("{name}/bias_re"), Tensor::zeros(&[out_features])),
            bias_im: store.add(format!("{name}/bias_im"), Tensor::zeros(&[out_features])),
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: CVar) -> CVar {
        let s = ctx.tape.shape(x.re).to_vec();
        let rows = ctx.tape.value(x.re).len() / self.in_features;
        let (a, b) = (ctx.param(self.a), ctx.param(self.b));
        let (br, bi) = (ctx.param(self.bias_re), ctx.param(self.bias_im));
        let t = &mut *ctx.tape;
        let xr = t.reshape(x.re, &[rows, self.in_features]);
        let xi = t.reshape(x.im, &[rows, self.in_features]);
        let ra = t.matmul(xr, a, false, true);
        let ib = t.matmul(xi, b, false, true);
        let rb = t.matmul(xr, b, false, true);
        let ia = t.matmul(xi, a, false, true);
        let re = t.sub(ra, ib);
        let im = t.add(rb, ia);
        let re = t.add_last(re, br);
        let im = t.add_last(im, bi);
        let mut out = s;
        *out.last_mut().unwrap() = self.out_features;
        CVar {
            re: t.reshape(re, &out),
            im: t.reshape(im, &out),
        }
    }
}
