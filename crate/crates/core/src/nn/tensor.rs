use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::NnError;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Maps the output gradient (and the output values) to one optional gradient
/// per parent, in parent order.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

/// Dense row-major `f64` array that records the operations applied to it.
///
/// Cloning is cheap (shared node). Graph nodes are created in increasing id
/// order, so sorting reachable nodes by descending id is a valid reverse
/// topological order for [`Tensor::backward`].
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl Tensor {
    fn make(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    /// A constant (untracked) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self, NnError> {
        check_len(&data, shape)?;
        Ok(Self::make(data, shape.to_vec(), false, None))
    }

    /// A leaf whose gradient is tracked.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self, NnError> {
        check_len(&data, shape)?;
        Ok(Self::make(data, shape.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::make(vec![0.0; shape.iter().product()], shape.to_vec(), false, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::make(vec![v], vec![], false, None)
    }

    /// Result of a differentiable operation. The backward closure is dropped
    /// when no parent is tracked.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        op: &'static str,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn { op, parents, backward });
        Self::make(data, shape, requires_grad, grad_fn)
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::make(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64, NnError> {
        if self.numel() == 1 {
            Ok(self.0.data[0])
        } else {
            Err(NnError::NotScalar(self.shape().to_vec()))
        }
    }

    /// Accumulated gradient; only leaves keep theirs after `backward`.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn op_name(&self) -> &'static str {
        self.0.grad_fn.as_ref().map_or("leaf", |g| g.op)
    }

    fn id(&self) -> u64 {
        self.0.id
    }

    fn accumulate(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// tracked leaf reachable from `self`; intermediate gradients are freed as
    /// soon as they have been propagated.
    pub fn backward(&self) -> Result<(), NnError> {
        if self.numel() != 1 {
            return Err(NnError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(NnError::NoGraph);
        }
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        let mut nodes = Vec::new();
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                stack.extend(gf.parents.iter().filter(|p| p.requires_grad() && !seen.contains(&p.id())).cloned());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(|t| std::cmp::Reverse(t.id()));

        self.accumulate(vec![1.0]);
        for node in &nodes {
            let Some(gf) = &node.0.grad_fn else { continue };
            let Some(g) = node.0.grad.borrow_mut().take() else { continue };
            let grads = (gf.backward)(&g, &node.0.data);
            debug_assert_eq!(grads.len(), gf.parents.len(), "{}", gf.op);
            for (p, pg) in gf.parents.iter().zip(grads) {
                if let Some(pg) = pg {
                    if p.requires_grad() {
                        debug_assert_eq!(pg.len(), p.numel(), "{} gradient length", gf.op);
                        p.accumulate(pg);
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_len(data: &[f64], shape: &[usize]) -> Result<(), NnError> {
    let n: usize = shape.iter().product();
    if n == data.len() {
        Ok(())
    } else {
        Err(NnError::DataLength { shape: shape.to_vec(), len: data.len() })
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("op", &self.op_name())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}
