//! Reshaping, axis permutation, concatenation, slicing and matrix products.

use super::{Tape, Var};
use crate::tensor::{numel, Real, Tensor};

/// Axis permutation: output axis `i` is input axis `perm[i]`.
pub(crate) fn permute_tensor<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    assert_eq!(perm.len(), shape.len(), "permute: rank mismatch");
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    let last = rank - 1;
    let (inner_len, inner_stride) = (out_shape[last], strides[last]);
    loop {
        let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.extend((0..inner_len).map(|j| src[base + j * inner_stride]));
        // advance all but the innermost axis
        let mut ax = last;
        loop {
            if ax == 0 {
                return Tensor::from_vec(&out_shape, out).unwrap();
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (numel(&shape[..axis]), numel(&shape[axis + 1..]))
}

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let src_shape = self.shape(a).to_vec();
        let value = self.value(a).reshaped(shape).unwrap_or_else(|e| panic!("{e}"));
        self.push_op(
            value,
            &[a],
            Box::new(move |ctx| vec![Some(ctx.grad.reshaped(&src_shape).unwrap())]),
        )
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let value = permute_tensor(self.value(a), perm);
        let inv = inverse_perm(perm);
        self.push_op(
            value,
            &[a],
            Box::new(move |ctx| vec![Some(permute_tensor(ctx.grad, &inv))]),
        )
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        let first = self.shape(parts[0]).to_vec();
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(s.len(), first.len(), "concat: rank mismatch");
            for (d, (&x, &y)) in s.iter().zip(&first).enumerate() {
                assert!(d == axis || x == y, "concat: shape {s:?} vs {first:?}");
            }
            sizes.push(s[axis]);
        }
        let (outer, inner) = outer_inner(&first, axis);
        let total: usize = sizes.iter().sum();
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for (&p, &sz) in parts.iter().zip(&sizes) {
                let chunk = sz * inner;
                out.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::from_vec(&out_shape, out).unwrap();
        self.push_op(
            value,
            parts,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut grads: Vec<Vec<T>> = sizes.iter().map(|&s| Vec::with_capacity(outer * s * inner)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (buf, &sz) in grads.iter_mut().zip(&sizes) {
                        buf.extend_from_slice(&g[off..off + sz * inner]);
                        off += sz * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(&ctx.inputs)
                    .zip(&ctx.needs)
                    .map(|((d, x), &need)| need.then(|| Tensor::from_vec(x.shape(), d).unwrap()))
                    .collect()
            }),
        )
    }

    /// Sub-range `start..start+len` of `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shape(a).to_vec();
        assert!(start + len <= shape[axis], "slice out of range");
        let (outer, inner) = outer_inner(&shape, axis);
        let full = shape[axis] * inner;
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let value = Tensor::from_vec(&out_shape, out).unwrap();
        self.push_op(
            value,
            &[a],
            Box::new(move |ctx| {
                let mut g = Tensor::zeros(&shape);
                let gd = g.data_mut();
                for (o, chunk) in ctx.grad.data().chunks(len * inner).enumerate() {
                    let base = o * full + start * inner;
                    gd[base..base + len * inner].copy_from_slice(chunk);
                }
                vec![Some(g)]
            }),
        )
    }

    /// `op(a) @ op(b)` for 2-D operands, `op` transposing when the flag is set.
    pub fn matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(sa.len() == 2 && sb.len() == 2, "matmul: 2-D operands required");
        let (m, k) = if trans_a { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        assert_eq!(k, k2, "matmul: inner dimensions {sa:?} x {sb:?}");
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            trans_a,
            trans_b,
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            self.value(b).data(),
            T::zero(),
            &mut out,
        );
        let value = Tensor::from_vec(&[m, n], out).unwrap();
        self.push_op(
            value,
            &[a, b],
            Box::new(move |ctx| {
                let (av, bv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
                let ga = ctx.needs[0].then(|| {
                    let mut d = vec![T::zero(); m * k];
                    if trans_a {
                        T::gemm(trans_b, true, k, n, m, T::one(), bv, g, T::zero(), &mut d);
                    } else {
                        T::gemm(false, !trans_b, m, n, k, T::one(), g, bv, T::zero(), &mut d);
                    }
                    Tensor::from_vec(&sa, d).unwrap()
                });
                let gb = ctx.needs[1].then(|| {
                    let mut d = vec![T::zero(); k * n];
                    if trans_b {
                        T::gemm(true, trans_a, n, m, k, T::one(), g, av, T::zero(), &mut d);
                    } else {
                        T::gemm(!trans_a, false, k, m, n, T::one(), av, g, T::zero(), &mut d);
                    }
                    Tensor::from_vec(&sb, d).unwrap()
                });
                vec![ga, gb]
            }),
        )
    }
}
