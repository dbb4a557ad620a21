//! Gradient tape: every differentiable op appends a node, and `backward`
//! walks the nodes in exact reverse recording order.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{invalid, Result, TensorError};
use crate::optim::Param;
use crate::tensor::Tensor;

/// Maps the output gradient to one optional gradient per parent. The second
/// argument says which parents require a gradient; entries for the others
/// may be `None`.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(String, usize)>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        })
    }

    /// A leaf whose gradient is kept after `backward`.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
        })
    }

    /// Records `param` as a gradient leaf tagged with its name, so the
    /// resulting [`Gradients`] can be routed back to it.
    pub fn param(&self, param: &Param) -> Var<'_> {
        let var = self.leaf(param.value.clone());
        self.params.borrow_mut().push((param.name.clone(), var.id));
        var
    }

    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor,
        parents: &[Var<'t>],
        backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Var<'t> {
        for p in parents {
            assert!(std::ptr::eq(p.tape, self), "vars from different tapes");
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        self.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn),
        })
    }

    /// Reverse-mode sweep from a single-element `root`.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(root.tape, self), "root from a different tape");
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.numel() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let mut leaves: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        if nodes[root.id].requires_grad {
            pending[root.id] = Some(vec![1.0]);
        }
        for id in (0..=root.id).rev() {
            let Some(grad) = pending[id].take() else {
                continue;
            };
            let node = &nodes[id];
            match &node.backward {
                None => {
                    leaves.insert(id, grad);
                }
                Some(backward) => {
                    let needs: Vec<bool> = node
                        .parents
                        .iter()
                        .map(|&p| nodes[p].requires_grad)
                        .collect();
                    let contributions = backward(&grad, &needs);
                    debug_assert_eq!(contributions.len(), node.parents.len());
                    for ((&parent, contribution), need) in
                        node.parents.iter().zip(contributions).zip(needs)
                    {
                        let Some(contribution) = contribution else {
                            continue;
                        };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(contribution.len(), nodes[parent].value.numel());
                        match &mut pending[parent] {
                            Some(acc) => {
                                for (a, c) in acc.iter_mut().zip(&contribution) {
                                    *a += c;
                                }
                            }
                            slot @ None => *slot = Some(contribution),
                        }
                    }
                }
            }
        }
        let shapes = leaves
            .keys()
            .map(|&id| (id, nodes[id].value.shape().to_vec()))
            .collect();
        Ok(Gradients {
            leaves,
            shapes,
            params: self.params.borrow().clone(),
        })
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Value of a single-element var.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.numel(), 1, "item() on shape {:?}", v.shape());
        v.data()[0]
    }
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: BTreeMap<usize, Vec<f64>>,
    shapes: BTreeMap<usize, Vec<usize>>,
    params: Vec<(String, usize)>,
}

impl Gradients {
    /// Gradient of a leaf var; `None` when the root does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        let data = self.leaves.get(&var.id)?;
        Some(Tensor::new(&self.shapes[&var.id], data.clone()).expect("gradient shape"))
    }

    /// Gradient of `var`, or zeros of its shape when it did not contribute.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var).unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }

    /// Adds every recorded contribution for `param` (a parameter may be
    /// placed on the tape more than once) into `param.grad`. Returns whether
    /// any contribution was found.
    pub fn accumulate_into(&self, param: &mut Param) -> Result<bool> {
        let mut found = false;
        for (name, id) in &self.params {
            if name != &param.name {
                continue;
            }
            let Some(g) = self.leaves.get(id) else {
                continue;
            };
            if g.len() != param.value.numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "accumulate_into",
                    expected: param.value.shape().to_vec(),
                    got: self.shapes[id].clone(),
                });
            }
            param.accumulate_grad(g);
            found = true;
        }
        Ok(found)
    }
}
