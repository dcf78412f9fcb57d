//! Parameter storage and the Adam update rule.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::autodiff::{DiffNode, ParamBinding, Role, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// First/second moment estimates of one parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    /// Zero moments with the customary `β1 = 0.9, β2 = 0.999, ε = 1e-8`.
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            eps: T::from_f64_lossy(1e-8),
        }
    }
}

/// One bias-corrected Adam step on `param` using its accumulated gradient.
/// The gradient itself is left in place.
pub fn adam_update<T: Real>(param: &mut DiffNode<T>, state: &mut AdamState<T>, lr: T) -> Result<()> {
    if param.value.shape() != state.m.shape() {
        return Err(Error::dims("adam_update", param.value.shape(), state.m.shape()));
    }
    let grad = param.grad();
    if grad.data().iter().any(|g| g.is_nan()) {
        return Err(Error::Numeric("NaN in gradient, update refused".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (i, (p, &g)) in param.value.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub node: DiffNode<T>,
    pub adam: AdamState<T>,
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    tag: u64,
    params: Vec<Param<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tag: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let adam = AdamState::new(value.shape());
        self.params.push(Param {
            name: name.into(),
            node: DiffNode::new(value, Role::Parameter),
            adam,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.node.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].node.value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].node.value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Places a parameter on `tape`; trainable leaves receive gradients,
    /// frozen ones enter as constants.
    pub fn var(&self, tape: &mut Tape<T>, id: ParamId, trainable: bool) -> Var {
        let value = self.params[id.0].node.value.clone();
        if trainable {
            tape.bound_param(
                value,
                ParamBinding {
                    store: self.tag,
                    index: id.0,
                },
            )
        } else {
            tape.input(value)
        }
    }

    /// Adds the gradients of this store's leaves on `tape` into the
    /// parameters' gradient slots.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>) {
        for (binding, node) in tape.bindings() {
            if binding.store != self.tag {
                continue;
            }
            if let Some(g) = node.grad_ref() {
                self.params[binding.index].node.accumulate(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.node.zero_grad();
        }
    }

    /// Applies Adam to every parameter. Fails without touching anything if
    /// any gradient contains NaN.
    pub fn adam_step(&mut self, lr: T) -> Result<()> {
        if let Some(p) = self
            .params
            .iter()
            .find(|p| p.node.grad_ref().is_some_and(|g| g.data().iter().any(|v| v.is_nan())))
        {
            return Err(Error::Numeric(format!("NaN gradient in parameter {}", p.name)));
        }
        for p in &mut self.params {
            adam_update(&mut p.node, &mut p.adam, lr)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.node.value.all_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node_with_grad(value: &[f64], grad: &[f64]) -> DiffNode<f64> {
        let mut n = DiffNode::new(
            Tensor::from_vec(&[value.len()], value.to_vec()).unwrap(),
            Role::Parameter,
        );
        n.accumulate(&Tensor::from_vec(&[grad.len()], grad.to_vec()).unwrap());
        n
    }

    #[test]
    fn zero_grad_leaves_param_and_counts_step() {
        let mut p = node_with_grad(&[1.0, -2.0], &[0.0, 0.0]);
        let mut s = AdamState::new(&[2]);
        adam_update(&mut p, &mut s, 0.001).unwrap();
        assert_eq!(p.value.data(), &[1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 after one step, so the update is lr * g/(|g| + eps)
        let mut p = node_with_grad(&[0.5], &[1.0]);
        let mut s = AdamState::new(&[1]);
        adam_update(&mut p, &mut s, 0.001).unwrap();
        let expected = 0.5 - 0.001 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut p = node_with_grad(&[0.0, 0.0], &[3.0, -0.5]);
        let mut s = AdamState::new(&[2]);
        for _ in 0..50 {
            adam_update(&mut p, &mut s, 0.01).unwrap();
        }
        assert!(p.value.data()[0] < -0.4);
        assert!(p.value.data()[1] > 0.4);
        assert_eq!(s.step, 50);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = node_with_grad(&[0.3, 0.7], &[5.0, -1.0]);
        let mut s = AdamState::new(&[2]);
        for _ in 0..5 {
            adam_update(&mut p, &mut s, 0.0).unwrap();
        }
        assert_eq!(p.value.data(), &[0.3, 0.7]);
    }

    #[test]
    fn nan_gradient_is_refused() {
        let mut p = node_with_grad(&[0.3], &[f64::NAN]);
        let mut s = AdamState::new(&[1]);
        assert!(matches!(adam_update(&mut p, &mut s, 0.1), Err(Error::Numeric(_))));
        assert_eq!(p.value.data(), &[0.3]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn store_collects_only_its_own_gradients() {
        let mut a = ParamStore::<f64>::new();
        let mut b = ParamStore::<f64>::new();
        let pa = a.add("a", Tensor::full(&[2], 1.0));
        let pb = b.add("b", Tensor::full(&[2], 2.0));
        let mut tape = Tape::new();
        let va = a.var(&mut tape, pa, true);
        let vb = b.var(&mut tape, pb, true);
        let m = tape.mul(va, vb);
        let l = tape.sum(m);
        tape.backward(l).unwrap();
        a.accumulate_grads(&tape);
        assert_eq!(a.get(pa).node.grad(), Tensor::full(&[2], 2.0));
        assert!(b.get(pb).node.grad_ref().is_none());
        b.accumulate_grads(&tape);
        assert_eq!(b.get(pb).node.grad(), Tensor::full(&[2], 1.0));
    }
}
