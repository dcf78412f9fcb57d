//! Patch extraction (`im2col`) and its adjoint (`col2im`), and the strided
//! 2-D convolution / transposed convolution built from them.
//!
//! Feature maps are `[C, B, F, T]`: channels, batch, frequency (or sample)
//! axis, time axis. One-dimensional convolutions use `T = 1`.

use super::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Kernel size, stride and zero padding along the two spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    /// `(frequency taps, time taps)`
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    /// `(before, after)` padding on the frequency axis.
    pub pad_f: (usize, usize),
    /// `(before, after)` padding on the time axis.
    pub pad_t: (usize, usize),
}

impl ConvGeometry {
    pub fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    /// Output extent along each axis, `None` if the kernel does not fit.
    pub fn output_size(&self, f: usize, t: usize) -> Option<(usize, usize)> {
        let pf = f + self.pad_f.0 + self.pad_f.1;
        let pt = t + self.pad_t.0 + self.pad_t.1;
        if pf < self.kernel.0 || pt < self.kernel.1 {
            return None;
        }
        Some((
            (pf - self.kernel.0) / self.stride.0 + 1,
            (pt - self.kernel.1) / self.stride.1 + 1,
        ))
    }
}

/// First and one-past-last output index `o` with `0 <= o*stride + tap - pad < n`.
fn valid_range(n: usize, stride: usize, tap: usize, pad: usize, out: usize) -> (usize, usize) {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi = if n + pad > tap {
        ((n + pad - tap - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Visits the runs `(column_offset, source_index, len, source_step)` of one
/// kernel tap; a run covers consecutive columns.
#[inline]
fn for_each_tap(
    geom: &ConvGeometry,
    dims: (usize, usize, usize, usize),
    out: (usize, usize),
    c: usize,
    i: usize,
    j: usize,
    mut visit: impl FnMut(usize, usize, usize, usize),
) {
    let (_, b_n, f_n, t_n) = dims;
    let (fo, to) = out;
    let (f_lo, f_hi) = valid_range(f_n, geom.stride.0, i, geom.pad_f.0, fo);
    let (t_lo, t_hi) = valid_range(t_n, geom.stride.1, j, geom.pad_t.0, to);
    if f_lo == f_hi || t_lo == t_hi {
        return;
    }
    let f0 = f_lo * geom.stride.0 + i - geom.pad_f.0;
    let t0 = t_lo * geom.stride.1 + j - geom.pad_t.0;
    if to == 1 {
        // one column per frequency row: run along the frequency axis instead
        for b in 0..b_n {
            let src = ((c * b_n + b) * f_n + f0) * t_n + t0;
            visit(b * fo + f_lo, src, f_hi - f_lo, geom.stride.0 * t_n);
        }
        return;
    }
    for b in 0..b_n {
        for fp in f_lo..f_hi {
            let f = f0 + (fp - f_lo) * geom.stride.0;
            let src_row = ((c * b_n + b) * f_n + f) * t_n;
            visit((b * fo + fp) * to + t_lo, src_row + t0, t_hi - t_lo, geom.stride.1);
        }
    }
}

pub(crate) fn im2col<T: Real>(x: &Tensor<T>, geom: &ConvGeometry) -> Tensor<T> {
    let s = x.shape();
    let dims = (s[0], s[1], s[2], s[3]);
    let (fo, to) = geom
        .output_size(dims.2, dims.3)
        .expect("im2col: kernel larger than padded input");
    let ncol = dims.1 * fo * to;
    let (kf, kt) = geom.kernel;
    let mut cols = vec![T::zero(); dims.0 * kf * kt * ncol];
    let src = x.data();
    for c in 0..dims.0 {
        for i in 0..kf {
            for j in 0..kt {
                let row = ((c * kf + i) * kt + j) * ncol;
                let dst = &mut cols[row..row + ncol];
                for_each_tap(geom, dims, (fo, to), c, i, j, |col, idx, len, st| {
                    let d = &mut dst[col..col + len];
                    if st == 1 {
                        d.copy_from_slice(&src[idx..idx + len]);
                    } else {
                        for (k, v) in d.iter_mut().enumerate() {
                            *v = src[idx + k * st];
                        }
                    }
                });
            }
        }
    }
    Tensor::from_vec(&[dims.0 * kf * kt, ncol], cols).unwrap()
}

/// Adjoint of [`im2col`]: scatters columns back onto a `[C, B, F, T]` map.
pub(crate) fn col2im<T: Real>(cols: &Tensor<T>, geom: &ConvGeometry, shape: &[usize]) -> Tensor<T> {
    let dims = (shape[0], shape[1], shape[2], shape[3]);
    let (fo, to) = geom
        .output_size(dims.2, dims.3)
        .expect("col2im: kernel larger than padded input");
    let ncol = dims.1 * fo * to;
    let (kf, kt) = geom.kernel;
    assert_eq!(cols.shape(), &[dims.0 * kf * kt, ncol], "col2im: column shape");
    let mut out = Tensor::zeros(shape);
    let dst = out.data_mut();
    let src = cols.data();
    for c in 0..dims.0 {
        for i in 0..kf {
            for j in 0..kt {
                let row = ((c * kf + i) * kt + j) * ncol;
                let col_src = &src[row..row + ncol];
                for_each_tap(geom, dims, (fo, to), c, i, j, |col, idx, len, st| {
                    let c = &col_src[col..col + len];
                    if st == 1 {
                        for (d, v) in dst[idx..idx + len].iter_mut().zip(c) {
                            *d += *v;
                        }
                    } else {
                        for (k, v) in c.iter().enumerate() {
                            dst[idx + k * st] += *v;
                        }
                    }
                });
            }
        }
    }
    out
}

impl<T: Real> Tape<T> {
    pub fn im2col(&mut self, x: Var, geom: ConvGeometry) -> Var {
        assert_eq!(self.shape(x).len(), 4, "im2col expects [C, B, F, T]");
        let shape = self.shape(x).to_vec();
        let value = im2col(self.value(x), &geom);
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| vec![Some(col2im(ctx.grad, &geom, &shape))]),
        )
    }

    pub fn col2im(&mut self, cols: Var, geom: ConvGeometry, shape: &[usize]) -> Var {
        let value = col2im(self.value(cols), &geom, shape);
        self.push_op(value, &[cols], Box::new(move |ctx| vec![Some(im2col(ctx.grad, &geom))]))
    }

    /// Real cross-correlation of `x: [C, B, F, T]` with `w: [O, C, kf, kt]`,
    /// giving `[O, B, F', T']`. Pass precomputed columns with
    /// [`Tape::conv2d_cols`] to share them between several kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeometry) -> Var {
        let cols = self.im2col(x, geom);
        let s = self.shape(x).to_vec();
        let (fo, to) = geom.output_size(s[2], s[3]).unwrap();
        self.conv2d_cols(cols, w, (s[1], fo, to))
    }

    /// Convolution from columns produced by [`Tape::im2col`]; `out` is
    /// `(batch, F', T')`.
    pub fn conv2d_cols(&mut self, cols: Var, w: Var, out: (usize, usize, usize)) -> Var {
        let ws = self.shape(w).to_vec();
        let o = ws[0];
        let k: usize = ws[1..].iter().product();
        assert_eq!(self.shape(cols)[0], k, "conv2d: kernel {ws:?} vs columns");
        let wm = self.reshape(w, &[o, k]);
        let y = self.matmul(wm, cols, false, false);
        self.reshape(y, &[o, out.0, out.1, out.2])
    }

    /// Adjoint of [`Tape::conv2d`] with respect to its input: maps
    /// `y: [O, B, F', T']` back to `[C, B, F, T]` where `(F, T) = out_ft`.
    /// `w` has the forward layout `[O, C, kf, kt]`.
    pub fn conv_transpose2d(&mut self, y: Var, w: Var, geom: ConvGeometry, out_ft: (usize, usize)) -> Var {
        let ys = self.shape(y).to_vec();
        let ws = self.shape(w).to_vec();
        let (o, c) = (ws[0], ws[1]);
        assert_eq!(ys[0], o, "conv_transpose2d: channel mismatch");
        let expect = geom.output_size(out_ft.0, out_ft.1);
        assert_eq!(
            expect,
            Some((ys[2], ys[3])),
            "conv_transpose2d: target {out_ft:?} inconsistent with input {ys:?}"
        );
        let k = c * geom.taps();
        let wm = self.reshape(w, &[o, k]);
        let ym = self.reshape(y, &[o, ys[1] * ys[2] * ys[3]]);
        let cols = self.matmul(wm, ym, true, false);
        self.col2im(cols, geom, &[c, ys[1], out_ft.0, out_ft.1])
    }
}
