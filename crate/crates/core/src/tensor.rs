//! Dense row-major tensors over a generic floating type.
//!
//! [`Tensor`] is the real-valued carrier; [`ComplexTensor`] stores a complex
//! array as two real planes of identical shape. All the model arithmetic is
//! written against the [`Real`] trait so that gradient checks can run in
//! `f64` while training runs in `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::{Error, Result};

/// Floating-point element type usable throughout the crate.
pub trait Real: Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static {
    /// Human-readable precision name (`"f32"` / `"f64"`).
    const NAME: &'static str;

    /// `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m x k` and
    /// `op(b)` is `k x n`, all row-major.
    ///
    /// Safety of the raw kernel is guaranteed by the slice length checks.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

fn strides(trans: bool, rows: usize, cols: usize) -> (isize, isize) {
    // matrix stored row-major as `rows x cols` when not transposed, as
    // `cols x rows` otherwise
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Real for $t {
            const NAME: &'static str = $name;

            fn gemm(
                trans_a: bool,
                trans_b: bool,
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: lhs too short");
                assert!(b.len() >= k * n, "gemm: rhs too short");
                assert!(c.len() >= m * n, "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for v in c[..m * n].iter_mut() {
                        *v *= beta;
                    }
                    return;
                }
                let (rsa, csa) = strides(trans_a, m, k);
                let (rsb, csb) = strides(trans_b, k, n);
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, "f32", matrixmultiply::sgemm);
impl_real!(f64, "f64", matrixmultiply::dgemm);

/// Dense real tensor: a shape and a row-major data buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Alias used where the distinction from [`ComplexTensor`] matters.
pub type RealTensor<T> = Tensor<T>;

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        debug_assert!(shape.iter().all(|&d| d >= 1), "zero-sized dim in {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("tensor", format!("invalid shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::dims("Tensor::from_vec", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::dims("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        self.clone().reshape(shape)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Self, context: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dims(context, &self.shape, &other.shape));
        }
        Ok(())
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len()).unwrap()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap()))
                .collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap()).collect()
    }
}

/// Complex tensor stored as split real and imaginary planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Real> ComplexTensor<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        re.check_same_shape(&im, "ComplexTensor planes")?;
        Ok(ComplexTensor { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        ComplexTensor {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    /// Constant tensor filled with `re + j im`.
    pub fn full(shape: &[usize], re: T, im: T) -> Self {
        ComplexTensor {
            re: Tensor::full(shape, re),
            im: Tensor::full(shape, im),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Elementwise magnitude.
    pub fn abs(&self) -> Tensor<T> {
        self.re.zip_map(&self.im, |r, i| r.hypot(i)).unwrap()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.re.max_abs_diff(&other.re).max(self.im.max_abs_diff(&other.im))
    }
}

/// Elementwise complex product `a ⊙ b`.
///
/// `b` may be broadcast along leading dimensions of `a`: its shape must equal
/// a trailing suffix of `a`'s shape.
pub fn complex_elementwise_mul<T: Real>(a: &ComplexTensor<T>, b: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    let broadcast = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb;
    if !broadcast {
        return Err(Error::dims("complex_elementwise_mul", sa, sb));
    }
    let inner = b.len();
    let mut re = Vec::with_capacity(a.len());
    let mut im = Vec::with_capacity(a.len());
    for (idx, (&ar, &ai)) in a.re.data().iter().zip(a.im.data()).enumerate() {
        let j = idx % inner;
        let (br, bi) = (b.re.data()[j], b.im.data()[j]);
        re.push(ar * br - ai * bi);
        im.push(ar * bi + ai * br);
    }
    Ok(ComplexTensor {
        re: Tensor::from_vec(sa, re)?,
        im: Tensor::from_vec(sa, im)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_complex(rng: &mut ChaCha8Rng, shape: &[usize]) -> ComplexTensor<f64> {
        let n = numel(shape);
        let re = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let im = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ComplexTensor::new(
            Tensor::from_vec(shape, re).unwrap(),
            Tensor::from_vec(shape, im).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let at = |i: usize, l: usize| if ta { a[l * m + i] } else { a[i * k + l] };
            let bt = |l: usize, j: usize| if tb { b[j * k + l] } else { b[l * n + j] };
            let mut c = vec![1.0; m * n];
            f64::gemm(ta, tb, m, k, n, 2.0, &a, &b, 0.5, &mut c);
            for i in 0..m {
                for j in 0..n {
                    let want: f64 = 0.5 + 2.0 * (0..k).map(|l| at(i, l) * bt(l, j)).sum::<f64>();
                    assert!((c[i * n + j] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn complex_mul_identity_and_j_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_complex(&mut rng, &[2, 3]);
        let one = ComplexTensor::full(&[2, 3], 1.0, 0.0);
        assert_eq!(complex_elementwise_mul(&one, &x).unwrap(), x);

        let j = ComplexTensor::full(&[1], 0.0, 1.0);
        let jj = complex_elementwise_mul(&j, &j).unwrap();
        assert_eq!(jj.re.data(), &[-1.0]);
        assert_eq!(jj.im.data(), &[0.0]);
    }

    #[test]
    fn complex_mul_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_complex(&mut rng, &[3, 3]);
        let b = random_complex(&mut rng, &[3, 3]);
        let got = complex_elementwise_mul(&a, &b).unwrap();
        for i in 0..9 {
            let (ar, ai) = (a.re.data()[i], a.im.data()[i]);
            let (br, bi) = (b.re.data()[i], b.im.data()[i]);
            assert!((got.re.data()[i] - (ar * br - ai * bi)).abs() < 1e-12);
            assert!((got.im.data()[i] - (ar * bi + ai * br)).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_mul_broadcasts_leading_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_complex(&mut rng, &[4, 2, 3]);
        let b = random_complex(&mut rng, &[2, 3]);
        let got = complex_elementwise_mul(&a, &b).unwrap();
        assert_eq!(got.shape(), &[4, 2, 3]);
        assert!((got.re.data()[7] - (a.re.data()[7] * b.re.data()[1] - a.im.data()[7] * b.im.data()[1])).abs() < 1e-15);
    }

    #[test]
    fn complex_mul_shape_mismatch_names_both_shapes() {
        let a = ComplexTensor::<f64>::zeros(&[2, 3]);
        let b = ComplexTensor::<f64>::zeros(&[3, 2]);
        let msg = complex_elementwise_mul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    proptest! {
        #[test]
        fn complex_mul_commutative_and_associative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_complex(&mut rng, &[2, 4]);
            let b = random_complex(&mut rng, &[2, 4]);
            let c = random_complex(&mut rng, &[2, 4]);
            let ab = complex_elementwise_mul(&a, &b).unwrap();
            let ba = complex_elementwise_mul(&b, &a).unwrap();
            prop_assert!(ab.max_abs_diff(&ba) < 1e-12);
            let ab_c = complex_elementwise_mul(&ab, &c).unwrap();
            let a_bc = complex_elementwise_mul(&a, &complex_elementwise_mul(&b, &c).unwrap()).unwrap();
            prop_assert!(ab_c.max_abs_diff(&a_bc) < 1e-12);
        }
    }
}
