//! Complex 2-D convolution and transposed convolution, and the real strided
//! 1-D convolution of the discriminator.
//!
//! With kernel `W = A + jB` and input `H = X + jY` the complex convolution is
//! `(A∗X − B∗Y) + j(B∗X + A∗Y)`.

use rand::Rng;

use super::{uniform, CVar, Ctx, SpectralNormState};
use crate::autodiff::{ConvGeometry, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore};
use crate::tensor::{ComplexTensor, Real, Tensor};

/// Encoder geometry: 5 frequency × 2 time taps, frequency stride 2, padding
/// 2/1 on frequency (halving any even size) and one causal frame on time.
pub fn encoder_geometry() -> ConvGeometry {
    ConvGeometry {
        kernel: (5, 2),
        stride: (2, 1),
        pad_f: (2, 1),
        pad_t: (1, 0),
    }
}

/// Tape handles of a complex kernel. For a transposed convolution the
/// kernels keep the layout of the forward convolution they transpose,
/// `[in, out, kf, kt]`.
#[derive(Clone, Copy, Debug)]
pub struct ComplexConvVars {
    pub a: Var,
    pub b: Var,
    pub bias_re: Var,
    pub bias_im: Var,
}

impl ComplexConvVars {
    pub fn conv<T: Real>(&self, tape: &mut Tape<T>, x: CVar, geom: ConvGeometry) -> CVar {
        let s = tape.shape(x.re).to_vec();
        let (fo, to) = geom.output_size(s[2], s[3]).expect("complex conv: input too small");
        let out = (s[1], fo, to);
        let cx = tape.im2col(x.re, geom);
        let cy = tape.im2col(x.im, geom);
        let ax = tape.conv2d_cols(cx, self.a, out);
        let by = tape.conv2d_cols(cy, self.b, out);
        let bx = tape.conv2d_cols(cx, self.b, out);
        let ay = tape.conv2d_cols(cy, self.a, out);
        let re = tape.sub(ax, by);
        let im = tape.add(bx, ay);
        CVar {
            re: tape.add_channel(re, self.bias_re),
            im: tape.add_channel(im, self.bias_im),
        }
    }

    /// Transposed convolution back to frequency/time size `out_ft`.
    pub fn conv_transpose<T: Real>(
        &self,
        tape: &mut Tape<T>,
        x: CVar,
        geom: ConvGeometry,
        out_ft: (usize, usize),
    ) -> CVar {
        let ax = tape.conv_transpose2d(x.re, self.a, geom, out_ft);
        let by = tape.conv_transpose2d(x.im, self.b, geom, out_ft);
        let bx = tape.conv_transpose2d(x.re, self.b, geom, out_ft);
        let ay = tape.conv_transpose2d(x.im, self.a, geom, out_ft);
        let re = tape.sub(ax, by);
        let im = tape.add(bx, ay);
        CVar {
            re: tape.add_channel(re, self.bias_re),
            im: tape.add_channel(im, self.bias_im),
        }
    }
}

/// Plain-tensor complex kernel, `[out, in, kf, kt]` for a convolution.
#[derive(Clone, Debug)]
pub struct ComplexConvParams<T> {
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub bias_re: Tensor<T>,
    pub bias_im: Tensor<T>,
    pub geom: ConvGeometry,
}

impl<T: Real> ComplexConvParams<T> {
    /// Zero-bias kernel with the encoder geometry.
    pub fn new(a: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        a.check_same_shape(&b, "complex kernel planes")?;
        if a.rank() != 4 {
            return Err(Error::shape(
                "complex kernel",
                format!("expected rank 4, got {:?}", a.shape()),
            ));
        }
        let bias_len = a.shape()[0];
        Ok(ComplexConvParams {
            bias_re: Tensor::zeros(&[bias_len]),
            bias_im: Tensor::zeros(&[bias_len]),
            a,
            b,
            geom: encoder_geometry(),
        })
    }

    /// Zero-bias kernel used as a transposed convolution, so the bias
    /// follows the second kernel axis.
    pub fn new_transposed(a: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        let mut p = Self::new(a, b)?;
        let out = p.a.shape()[1];
        p.bias_re = Tensor::zeros(&[out]);
        p.bias_im = Tensor::zeros(&[out]);
        Ok(p)
    }

    fn check_bias(&self, out: usize, context: &str) -> Result<()> {
        for b in [&self.bias_re, &self.bias_im] {
            if b.shape() != [out] {
                return Err(Error::dims(context, b.shape(), &[out]));
            }
        }
        Ok(())
    }

    fn vars(&self, tape: &mut Tape<T>) -> ComplexConvVars {
        ComplexConvVars {
            a: tape.input(self.a.clone()),
            b: tape.input(self.b.clone()),
            bias_re: tape.input(self.bias_re.clone()),
            bias_im: tape.input(self.bias_im.clone()),
        }
    }
}

/// Accepts `[C, F, T]` or `[C, B, F, T]`; returns the batched shape and
/// whether the batch axis was added.
fn batched<T: Real>(x: &ComplexTensor<T>) -> Result<(ComplexTensor<T>, bool)> {
    match x.shape().len() {
        4 => Ok((x.clone(), false)),
        3 => {
            let s = x.shape();
            let shape = [s[0], 1, s[1], s[2]];
            Ok((
                ComplexTensor::new(x.re.reshaped(&shape)?, x.im.reshaped(&shape)?)?,
                true,
            ))
        }
        _ => Err(Error::shape(
            "complex conv input",
            format!("expected [C, F, T] or [C, B, F, T], got {:?}", x.shape()),
        )),
    }
}

fn unbatched<T: Real>(y: Tensor<T>, squeeze: bool) -> Tensor<T> {
    if squeeze {
        let s = y.shape().to_vec();
        y.reshape(&[s[0], s[2], s[3]]).unwrap()
    } else {
        y
    }
}

/// Complex convolution of `[in, F, T]` (or batched `[in, B, F, T]`) features.
pub fn complex_conv2d<T: Real>(x: &ComplexTensor<T>, p: &ComplexConvParams<T>) -> Result<ComplexTensor<T>> {
    let (x, squeeze) = batched(x)?;
    let s = x.shape();
    if s[0] != p.a.shape()[1] {
        return Err(Error::dims("complex_conv2d input channels", &[s[0]], &[p.a.shape()[1]]));
    }
    if s[2] < p.geom.kernel.0 || p.geom.output_size(s[2], s[3]).is_none() {
        return Err(Error::shape(
            "complex_conv2d",
            format!("input {s:?} smaller than kernel {:?}", p.geom.kernel),
        ));
    }
    p.check_bias(p.a.shape()[0], "complex_conv2d bias")?;
    let mut tape = Tape::new();
    let w = p.vars(&mut tape);
    let h = CVar {
        re: tape.input(x.re),
        im: tape.input(x.im),
    };
    let y = w.conv(&mut tape, h, p.geom);
    ComplexTensor::new(
        unbatched(tape.value(y.re).clone(), squeeze),
        unbatched(tape.value(y.im).clone(), squeeze),
    )
}

/// Transposed complex convolution with kernels laid out as the forward
/// convolution `[in_of_forward, out_of_forward, kf, kt]`; `out_ft` is the
/// frequency/time size to restore.
pub fn complex_transposed_conv2d<T: Real>(
    x: &ComplexTensor<T>,
    p: &ComplexConvParams<T>,
    out_ft: (usize, usize),
) -> Result<ComplexTensor<T>> {
    let (x, squeeze) = batched(x)?;
    let s = x.shape();
    if s[0] != p.a.shape()[0] {
        return Err(Error::dims(
            "complex_transposed_conv2d input channels",
            &[s[0]],
            &[p.a.shape()[0]],
        ));
    }
    if p.geom.output_size(out_ft.0, out_ft.1) != Some((s[2], s[3])) {
        return Err(Error::dims(
            "complex_transposed_conv2d target",
            &[s[2], s[3]],
            &[out_ft.0, out_ft.1],
        ));
    }
    p.check_bias(p.a.shape()[1], "complex_transposed_conv2d bias")?;
    let mut tape = Tape::new();
    let w = p.vars(&mut tape);
    let h = CVar {
        re: tape.input(x.re),
        im: tape.input(x.im),
    };
    let y = w.conv_transpose(&mut tape, h, p.geom, out_ft);
    ComplexTensor::new(
        unbatched(tape.value(y.re).clone(), squeeze),
        unbatched(tape.value(y.im).clone(), squeeze),
    )
}

/// Complex convolution or transposed convolution layer.
#[derive(Clone, Debug)]
pub struct ComplexConv2d {
    a: ParamId,
    b: ParamId,
    bias_re: ParamId,
    bias_im: ParamId,
    pub geom: ConvGeometry,
    pub in_ch: usize,
    pub out_ch: usize,
    pub transposed: bool,
}

impl ComplexConv2d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        transposed: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let geom = encoder_geometry();
        let (kf, kt) = geom.kernel;
        let shape = if transposed {
            [in_ch, out_ch, kf, kt]
        } else {
            [out_ch, in_ch, kf, kt]
        };
        // two kernels contribute to each output plane
        let bound = 1.0 / ((2 * in_ch * kf * kt) as f64).sqrt();
        ComplexConv2d {
            a: store.add(format!("{name}/a"), uniform(rng, &shape, bound)),
            b: store.add(format!("{name}/b"), uniform(rng, &shape, bound)),
            bias_re: store.add(format!("{name}/bias_re"), Tensor::zeros(&[out_ch])),
            bias_im: store.add(format!("{name}/bias_im"), Tensor::zeros(&[out_ch])),
            geom,
            in_ch,
            out_ch,
            transposed,
        }
    }

    pub fn vars<T: Real>(&self, ctx: &mut Ctx<'_, T>) -> ComplexConvVars {
        ComplexConvVars {
            a: ctx.param(self.a),
            b: ctx.param(self.b),
            bias_re: ctx.param(self.bias_re),
            bias_im: ctx.param(self.bias_im),
        }
    }

    /// `out_ft` is required for transposed layers and ignored otherwise.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: CVar, out_ft: (usize, usize)) -> CVar {
        let w = self.vars(ctx);
        if self.transposed {
            w.conv_transpose(ctx.tape, x, self.geom, out_ft)
        } else {
            w.conv(ctx.tape, x, self.geom)
        }
    }

    /// Kernel parameter ids, real plane first.
    pub fn kernel_ids(&self) -> (ParamId, ParamId) {
        (self.a, self.b)
    }
}

/// Geometry of a 1-D convolution over `[C, B, L, 1]` maps with symmetric
/// padding `filter_len / 2`.
fn geometry_1d(filter_len: usize, stride: usize) -> ConvGeometry {
    ConvGeometry {
        kernel: (filter_len, 1),
        stride: (stride, 1),
        pad_f: (filter_len / 2, filter_len / 2),
        pad_t: (0, 0),
    }
}

/// Real strided cross-correlation of `x: [C, L]` with `w: [O, C, K]` and
/// symmetric zero padding `K / 2`, giving `[O, L']`.
pub fn conv1d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize) -> Result<Tensor<T>> {
    if x.rank() != 2 || w.rank() != 3 {
        return Err(Error::shape(
            "conv1d",
            format!("expected [C, L] and [O, C, K], got {:?} and {:?}", x.shape(), w.shape()),
        ));
    }
    let (c, len) = (x.shape()[0], x.shape()[1]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    if w.shape()[1] != c {
        return Err(Error::dims("conv1d channels", &[c], &[w.shape()[1]]));
    }
    if stride == 0 {
        return Err(Error::Config("conv1d stride must be positive".into()));
    }
    let geom = geometry_1d(k, stride);
    let Some((lo, _)) = geom.output_size(len, 1) else {
        return Err(Error::Length(format!(
            "conv1d input of length {len} is shorter than the padded kernel"
        )));
    };
    let mut tape = Tape::new();
    let xv = tape.input(x.reshaped(&[c, 1, len, 1])?);
    let wv = tape.input(w.reshaped(&[o, c, k, 1])?);
    let mut y = tape.conv2d(xv, wv, geom);
    if let Some(b) = bias {
        let bv = tape.input(b.clone());
        y = tape.add_channel(y, bv);
    }
    tape.value(y).reshaped(&[o, lo])
}

/// Discriminator convolution, optionally spectrally normalized.
#[derive(Clone, Debug)]
pub struct Conv1d<T> {
    w: ParamId,
    bias: ParamId,
    pub geom: ConvGeometry,
    pub sn: Option<SpectralNormState<T>>,
}

impl<T: Real> Conv1d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        filter_len: usize,
        stride: usize,
        spectral: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((in_ch * filter_len) as f64).sqrt();
        let sn = spectral.then(|| SpectralNormState::new(out_ch, in_ch * filter_len, 1, rng));
        Conv1d {
            w: store.add(
                format!("{name}/w"),
                uniform(rng, &[out_ch, in_ch, filter_len, 1], bound),
            ),
            bias: store.add(format!("{name}/bias"), Tensor::zeros(&[out_ch])),
            geom: geometry_1d(filter_len, stride),
            sn,
        }
    }

    pub fn weight_id(&self) -> ParamId {
        self.w
    }

    /// `x: [C, B, L, 1] -> [O, B, L', 1]`.
    pub fn forward(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Var {
        let mut w = ctx.param(self.w);
        if let Some(sn) = &self.sn {
            let s = ctx.tape.shape(w).to_vec();
            let m = ctx.tape.reshape(w, &[s[0], s[1] * s[2] * s[3]]);
            let m = ctx.tape.spectral_norm(m, sn);
            w = ctx.tape.reshape(m, &s);
        }
        let b = ctx.param(self.bias);
        let y = ctx.tape.conv2d(x, w, self.geom);
        ctx.tape.add_channel(y, b)
    }

    /// Power iterations on the current weight.
    pub fn update_sn(&mut self, store: &ParamStore<T>) {
        let w = store.value(self.w);
        if let Some(sn) = &mut self.sn {
            let rows = w.shape()[0];
            let m = w.reshaped(&[rows, w.len() / rows]).unwrap();
            sn.power_iterate(&m);
        }
    }
}
