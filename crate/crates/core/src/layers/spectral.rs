//! Spectral normalization by power iteration.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::tensor::{Real, Tensor};

const SIGMA_FLOOR: f64 = 1e-12;

/// Singular-vector estimates of one weight matrix `[rows, cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralNormState<T> {
    /// Left singular vector, unit length.
    pub u: Tensor<T>,
    /// Right singular vector.
    pub v: Tensor<T>,
    pub n_power_iters: usize,
}

fn normalize<T: Real>(x: &mut [T]) {
    let n = x.iter().map(|&v| v * v).sum::<T>().sqrt();
    if n > T::from_f64_lossy(SIGMA_FLOOR) {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

impl<T: Real> SpectralNormState<T> {
    /// Random unit `u`; `v` stays zero until the first power iteration.
    pub fn new(rows: usize, cols: usize, n_power_iters: usize, rng: &mut impl Rng) -> Self {
        let mut u: Vec<T> = (0..rows)
            .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        normalize(&mut u);
        SpectralNormState {
            u: Tensor::from_vec(&[rows], u).unwrap(),
            v: Tensor::zeros(&[cols]),
            n_power_iters,
        }
    }

    /// `n_power_iters` rounds of `v ← Wᵀu/‖Wᵀu‖`, `u ← Wv/‖Wv‖`.
    pub fn power_iterate(&mut self, w: &Tensor<T>) {
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        assert_eq!(self.u.len(), rows, "spectral norm: u length");
        for _ in 0..self.n_power_iters {
            T::gemm(
                true,
                false,
                cols,
                rows,
                1,
                T::one(),
                w.data(),
                self.u.data(),
                T::zero(),
                self.v.data_mut(),
            );
            normalize(self.v.data_mut());
            T::gemm(
                false,
                false,
                rows,
                cols,
                1,
                T::one(),
                w.data(),
                self.v.data(),
                T::zero(),
                self.u.data_mut(),
            );
            normalize(self.u.data_mut());
        }
    }

    /// `uᵀWv`, floored at `1e-12`.
    pub fn sigma(&self, w: &Tensor<T>) -> T {
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        let mut wv = vec![T::zero(); rows];
        T::gemm(
            false,
            false,
            rows,
            cols,
            1,
            T::one(),
            w.data(),
            self.v.data(),
            T::zero(),
            &mut wv,
        );
        let s: T = wv.iter().zip(self.u.data()).map(|(&a, &b)| a * b).sum();
        s.max(T::from_f64_lossy(SIGMA_FLOOR))
    }
}

/// Runs the state's power iterations on `w: [rows, cols]` and returns
/// `(w / σ̂, σ̂)`.
pub fn spectral_normalize<T: Real>(w: &Tensor<T>, state: &mut SpectralNormState<T>) -> (Tensor<T>, T) {
    state.power_iterate(w);
    let sigma = state.sigma(w);
    (w.scale(T::one() / sigma), sigma)
}

impl<T: Real> Tape<T> {
    /// `W / σ̂` with `σ̂ = uᵀWv` for the state's fixed `u`, `v`.
    pub fn spectral_norm(&mut self, w: Var, state: &SpectralNormState<T>) -> Var {
        let s = self.shape(w).to_vec();
        assert_eq!(s.len(), 2, "spectral_norm expects a matrix");
        let sigma = state.sigma(self.value(w));
        let value = self.value(w).scale(T::one() / sigma);
        let (u, v) = (state.u.clone(), state.v.clone());
        let floored = sigma <= T::from_f64_lossy(SIGMA_FLOOR);
        self.push_op(
            value,
            &[w],
            Box::new(move |ctx| {
                let g = ctx.grad;
                let mut out = g.scale(T::one() / sigma);
                if !floored {
                    // d(W/σ) = dW/σ − W·(uᵀ dW v)/σ², so the pullback of G adds
                    // −⟨G, W⟩/σ² · u vᵀ
                    let c = g.dot(ctx.inputs[0]) / (sigma * sigma);
                    let cols = v.len();
                    for (i, &ui) in u.data().iter().enumerate() {
                        for (j, &vj) in v.data().iter().enumerate() {
                            out.data_mut()[i * cols + j] -= c * ui * vj;
                        }
                    }
                }
                vec![Some(out)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::testing::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Largest singular value via cyclic Jacobi on `WᵀW`.
    pub(crate) fn top_singular_value(w: &Tensor<f64>) -> f64 {
        let (r, c) = (w.shape()[0], w.shape()[1]);
        let mut a = vec![0.0; c * c];
        for i in 0..c {
            for j in 0..c {
                a[i * c + j] = (0..r).map(|k| w.data()[k * c + i] * w.data()[k * c + j]).sum();
            }
        }
        for _ in 0..100 {
            let off: f64 = (0..c)
                .flat_map(|i| (0..c).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i * c + j].powi(2))
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..c {
                for q in p + 1..c {
                    let apq = a[p * c + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q * c + q] - a[p * c + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let cs = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * cs;
                    for k in 0..c {
                        let (akp, akq) = (a[k * c + p], a[k * c + q]);
                        a[k * c + p] = cs * akp - sn * akq;
                        a[k * c + q] = sn * akp + cs * akq;
                    }
                    for k in 0..c {
                        let (apk, aqk) = (a[p * c + k], a[q * c + k]);
                        a[p * c + k] = cs * apk - sn * aqk;
                        a[q * c + k] = sn * apk + cs * aqk;
                    }
                }
            }
        }
        (0..c).map(|i| a[i * c + i]).fold(0.0, f64::max).sqrt()
    }

    fn state(rows: usize, cols: usize, iters: usize, seed: u64) -> SpectralNormState<f64> {
        SpectralNormState::new(rows, cols, iters, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn diagonal_spectrum() {
        let w = Tensor::from_vec(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let mut s = state(2, 2, 50, 1);
        let (n, sigma) = spectral_normalize(&w, &mut s);
        assert!((sigma - 3.0).abs() < 1e-6);
        assert!((top_singular_value(&n) - 1.0).abs() < 1e-6);
        let u = s.u.data();
        assert!((u[0] * u[0] + u[1] * u[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_rank_one_is_unchanged() {
        let a = [0.6, 0.8];
        let b = [1.0 / 3f64.sqrt(); 3];
        let w = Tensor::from_vec(&[2, 3], a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()).unwrap();
        let (n, _) = spectral_normalize(&w, &mut state(2, 3, 50, 2));
        assert!(n.max_abs_diff(&w) < 1e-6);
    }

    #[test]
    fn zero_matrix_stays_zero() {
        let w = Tensor::<f64>::zeros(&[3, 4]);
        let (n, sigma) = spectral_normalize(&w, &mut state(3, 4, 5, 3));
        assert_eq!(sigma, 1e-12);
        assert_eq!(n.max_abs(), 0.0);
    }

    #[test]
    fn random_8x8_matches_jacobi_oracle_after_50_iterations() {
        for seed in 0..10 {
            let w = random(seed + 100, &[8, 8]);
            let truth = top_singular_value(&w);
            let (n, sigma) = spectral_normalize(&w, &mut state(8, 8, 50, seed));
            assert!((sigma - truth).abs() < 1e-4 * truth, "{sigma} vs {truth}");
            assert!((top_singular_value(&n) - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn larger_matrices_converge_to_the_oracle() {
        // the rate is set by the gap between the two largest singular values,
        // so the iteration count here is generous
        for (seed, (r, c)) in [(16usize, 24usize), (64, 64), (32, 5)].into_iter().enumerate() {
            let w = random(seed as u64 + 200, &[r, c]);
            let truth = top_singular_value(&w);
            let (n, sigma) = spectral_normalize(&w, &mut state(r, c, 3000, seed as u64));
            assert!((sigma - truth).abs() < 1e-8 * truth, "{r}x{c}: {sigma} vs {truth}");
            assert!(top_singular_value(&n) <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn spectral_norm_gradcheck() {
        let w0 = random(7, &[3, 4]);
        let mut s = state(3, 4, 3, 4);
        s.power_iterate(&w0);
        check_gradients(&[w0], |t, v| {
            let n = t.spectral_norm(v[0], &s);
            probe_loss(t, n, 5)
        });
    }
}
