//! Graph nodes and reverse-mode differentiation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{ArrayD, IxDyn};

/// Dense `f64` array used for every value and gradient in the graph.
pub type Array = ArrayD<f64>;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

type BackwardFn = Box<dyn Fn(&Array, &[Var], &Array) -> Vec<Option<Array>>>;

struct Node {
    id: usize,
    value: Array,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// A value in the computation graph.
///
/// Cloning a `Var` is cheap: it shares the underlying node.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    fn with(value: Array, requires_grad: bool, parents: Vec<Var>, backward: Option<BackwardFn>) -> Var {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value: value.as_standard_layout().into_owned(),
            requires_grad,
            parents,
            backward,
        }))
    }

    /// A constant leaf; never receives a gradient.
    pub fn constant(value: Array) -> Var {
        Var::with(value, false, Vec::new(), None)
    }

    /// A trainable leaf.
    pub fn leaf(value: Array) -> Var {
        Var::with(value, true, Vec::new(), None)
    }

    pub fn scalar(v: f64) -> Var {
        Var::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Var {
        Var::constant(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/data length mismatch"))
    }

    /// Build an op node. When no parent requires a gradient the closure and
    /// parent links are dropped so the intermediate graph can be freed.
    pub(crate) fn from_op<F>(value: Array, parents: Vec<Var>, backward: F) -> Var
    where
        F: Fn(&Array, &[Var], &Array) -> Vec<Option<Array>> + 'static,
    {
        if parents.iter().any(|p| p.requires_grad()) {
            Var::with(value, true, parents, Some(Box::new(backward)))
        } else {
            Var::constant(value)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Array {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn ndim(&self) -> usize {
        self.0.value.ndim()
    }

    pub fn len(&self) -> usize {
        self.0.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.value.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Contiguous view of the data in row-major order.
    pub fn data(&self) -> &[f64] {
        self.0.value.as_slice().expect("values are kept in standard layout")
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.data()[0]
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    pub(crate) fn parents(&self) -> &[Var] {
        &self.0.parents
    }

    /// Reverse-mode differentiation of a scalar output.
    pub fn backward(&self) -> Gradients {
        assert_eq!(self.len(), 1, "backward() needs a scalar output, got {:?}", self.shape());
        self.backward_with(ArrayD::from_elem(self.0.value.raw_dim(), 1.0))
    }

    /// Reverse-mode differentiation seeded with an explicit output gradient.
    pub fn backward_with(&self, seed: Array) -> Gradients {
        let mut grads: HashMap<usize, Array> = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads };
        }
        let order = topo_order(self);
        grads.insert(self.id(), seed);
        for node in order.iter().rev() {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            let parent_grads = backward(&g, &node.0.parents, &node.0.value);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.shape(), parent.shape(), "gradient shape for parent");
                match grads.get_mut(&parent.id()) {
                    Some(acc) => *acc += &pg,
                    None => {
                        grads.insert(parent.id(), pg);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut visited: HashSet<usize> = HashSet::new();
    // (node, children expanded?)
    let mut stack: Vec<(Var, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        for p in node.parents() {
            if p.requires_grad() && !visited.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

/// Gradients of leaves (and any node whose gradient was not consumed).
#[derive(Default)]
pub struct Gradients {
    grads: HashMap<usize, Array>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Array> {
        self.grads.get(&v.id())
    }

    /// Gradient of `v`, or zeros when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: &Var) -> Array {
        self.get(v).cloned().unwrap_or_else(|| ArrayD::zeros(v.value().raw_dim()))
    }
}
