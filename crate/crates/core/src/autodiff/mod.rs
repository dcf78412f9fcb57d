//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value, its parents and a closure computing vector-Jacobian products.
//! [`Tape::backward`] walks the tape in reverse from a scalar loss.
//!
//! Complex layers never appear here directly: they are composed from real
//! operations on their real and imaginary planes, so all gradients are
//! ordinary real gradients of a real loss.
//!
//! Leaves come in three roles. `Input` leaves never receive gradients unless
//! created with [`Tape::variable`]; `Parameter` leaves are bound to a slot of a
//! [`ParamStore`](crate::optim::ParamStore) and their gradients are collected
//! with [`ParamStore::accumulate_grads`](crate::optim::ParamStore::accumulate_grads).

mod conv;
mod elementwise;
mod lstm;
mod shape;

pub use conv::ConvGeometry;
pub use lstm::LstmWeights;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// What a node is in the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Parameter,
    Intermediate,
    Input,
}

/// A value participating in differentiation together with its gradient slot.
#[derive(Clone, Debug)]
pub struct DiffNode<T> {
    pub value: Tensor<T>,
    grad: Option<Tensor<T>>,
    pub role: Role,
}

impl<T: Real> DiffNode<T> {
    pub fn new(value: Tensor<T>, role: Role) -> Self {
        DiffNode {
            value,
            grad: None,
            role,
        }
    }

    /// Accumulated gradient; zeros if nothing has flowed in yet.
    pub fn grad(&self) -> Tensor<T> {
        self.grad.clone().unwrap_or_else(|| Tensor::zeros(self.value.shape()))
    }

    pub fn grad_ref(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    pub fn accumulate(&mut self, g: &Tensor<T>) {
        match &mut self.grad {
            Some(acc) => acc.add_assign(g),
            None => self.grad = Some(g.clone()),
        }
    }

    fn accumulate_owned(&mut self, g: Tensor<T>) {
        match &mut self.grad {
            Some(acc) => acc.add_assign(&g),
            None => self.grad = Some(g),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Arguments handed to a node's backward closure.
pub struct BackwardCtx<'a, T> {
    /// Gradient of the loss with respect to this node's value.
    pub grad: &'a Tensor<T>,
    /// This node's forward value.
    pub value: &'a Tensor<T>,
    /// Forward values of the parents, in order.
    pub inputs: Vec<&'a Tensor<T>>,
    /// Which parents need a gradient.
    pub needs: Vec<bool>,
}

/// Produces one optional gradient per parent.
pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ParamBinding {
    pub store: u64,
    pub index: usize,
}

struct Entry<T> {
    node: DiffNode<T>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    binding: Option<ParamBinding>,
}

/// Records a forward computation for reverse-mode differentiation.
pub struct Tape<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor<T>, role: Role, requires_grad: bool) -> Var {
        self.entries.push(Entry {
            node: DiffNode::new(value, role),
            parents: Vec::new(),
            backward: None,
            requires_grad,
            binding: None,
        });
        Var(self.entries.len() - 1)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, Role::Input, false)
    }

    /// Input leaf that does receive a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, Role::Input, true)
    }

    pub(crate) fn bound_param(&mut self, value: Tensor<T>, binding: ParamBinding) -> Var {
        let v = self.push_leaf(value, Role::Parameter, true);
        self.entries[v.0].binding = Some(binding);
        v
    }

    /// Records an operation. `backward` is only stored when some parent
    /// requires a gradient.
    pub fn push_op(&mut self, value: Tensor<T>, parents: &[Var], backward: BackwardFn<T>) -> Var {
        let requires_grad = parents.iter().any(|p| self.entries[p.0].requires_grad);
        self.entries.push(Entry {
            node: DiffNode::new(value, Role::Intermediate),
            parents: parents.to_vec(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            binding: None,
        });
        Var(self.entries.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.entries[v.0].node.value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.entries[v.0].node.value.shape()
    }

    pub fn node(&self, v: Var) -> &DiffNode<T> {
        &self.entries[v.0].node
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.entries[v.0].requires_grad
    }

    /// Gradient accumulated at `v` (zeros if none).
    pub fn grad(&self, v: Var) -> Tensor<T> {
        self.entries[v.0].node.grad()
    }

    pub(crate) fn bindings(&self) -> impl Iterator<Item = (ParamBinding, &DiffNode<T>)> {
        self.entries.iter().filter_map(|e| e.binding.map(|b| (b, &e.node)))
    }

    /// Clears all gradients on the tape.
    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.node.zero_grad();
        }
    }

    /// Propagates `d loss / d node` to every node reachable from `loss`.
    ///
    /// Leaf gradients accumulate across calls; intermediate gradients are
    /// recomputed from scratch on every call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.entries[loss.0].node.value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        for e in &mut self.entries[..=loss.0] {
            if e.node.role == Role::Intermediate {
                e.node.zero_grad();
            }
        }
        let seed = Tensor::ones(self.entries[loss.0].node.value.shape());
        self.entries[loss.0].node.accumulate_owned(seed);

        for i in (0..=loss.0).rev() {
            let (head, tail) = self.entries.split_at_mut(i);
            let entry = &mut tail[0];
            let Some(backward) = entry.backward.as_ref() else {
                continue;
            };
            let Some(grad) = entry.node.grad.as_ref() else {
                continue;
            };
            let grads = {
                let ctx = BackwardCtx {
                    grad,
                    value: &entry.node.value,
                    inputs: entry.parents.iter().map(|p| &head[p.0].node.value).collect(),
                    needs: entry.parents.iter().map(|p| head[p.0].requires_grad).collect(),
                };
                backward(&ctx)
            };
            debug_assert_eq!(grads.len(), entry.parents.len());
            for (p, g) in entry.parents.iter().zip(grads) {
                if let Some(g) = g {
                    let parent = &mut head[p.0];
                    if parent.requires_grad {
                        debug_assert_eq!(g.shape(), parent.node.value.shape());
                        parent.node.accumulate_owned(g);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Central-difference gradient of a scalar function at `x`.
///
/// Coordinate `i` of the result is `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_difference_gradient<T: Real>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    h: T,
) -> Result<Tensor<T>> {
    if h <= T::zero() {
        return Err(Error::Contract(format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    let two_h = h + h;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!("non-finite function value at coordinate {i}")));
        }
        out.push((fp - fm) / two_h);
    }
    Tensor::from_vec(x.shape(), out)
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, or the absolute
/// error when both norms are below `floor`.
pub fn relative_error<T: Real>(a: &Tensor<T>, b: &Tensor<T>, floor: T) -> T {
    let diff = a.zip_map(b, |x, y| x - y).map(|t| t.norm()).unwrap_or(T::infinity());
    let scale = a.norm().max(b.norm());
    if scale < floor {
        diff
    } else {
        diff / scale
    }
}
