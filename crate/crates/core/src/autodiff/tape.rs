use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Operation recorded for a tape node. Carries whatever the derivative rules
/// need beyond the input and output values.
#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    /// Differentiable input.
    Leaf,
    /// Detached value pulled onto the tape by an operation.
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(T),
    Shift(T),
    Square,
    Sqrt,
    Log,
    Exp,
    Tanh,
    /// Inputs: pre-activation, slope of shape `[1]`.
    Prelu,
    LeakyRelu(T),
    MatMul {
        trans_a: bool,
        trans_b: bool,
    },
    /// `[m, n] + [n]`, bias broadcast over rows.
    AddRow,
    SumAll,
    SumRows,
    SumCols,
    BroadcastRows(usize),
    BroadcastCols(usize),
    Expand,
    Reshape,
    Slice {
        axis: usize,
        start: usize,
    },
    Pad {
        axis: usize,
        start: usize,
    },
    Concat {
        axis: usize,
    },
}

pub(crate) struct Node<T> {
    pub op: Op<T>,
    pub inputs: Vec<usize>,
    pub shape: Vec<usize>,
    pub data: Rc<Vec<T>>,
}

/// Differentiation tape: an append-only list of operation records.
///
/// Nodes are numbered in creation order, so the list is topologically sorted
/// by construction. A tape lives on one thread and is freed when its last
/// tensor handle is dropped.
#[derive(Clone)]
pub struct Tape<T: Real> {
    nodes: Rc<RefCell<Vec<Node<T>>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `value` as a differentiable input and returns the attached
    /// handle. The value buffer is shared, not copied.
    pub fn variable(&self, value: &Tensor<T>) -> Tensor<T> {
        let id = self.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape: value.shape.clone(),
            data: Rc::clone(&value.data),
        });
        Tensor {
            shape: value.shape.clone(),
            data: Rc::clone(&value.data),
            node: Some((self.clone(), id)),
        }
    }

    pub(crate) fn same(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    pub(crate) fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Op and input ids of node `id`, copied out so the borrow ends here.
    pub(crate) fn snapshot(&self, id: usize) -> (Op<T>, Vec<usize>) {
        let nodes = self.nodes.borrow();
        (nodes[id].op.clone(), nodes[id].inputs.clone())
    }

    pub(crate) fn with_nodes<R>(&self, f: impl FnOnce(&[Node<T>]) -> R) -> R {
        f(&self.nodes.borrow())
    }

    /// Handle to the value of node `id`; attached when `attached` is set and
    /// the node can carry gradient.
    pub(crate) fn tensor(&self, id: usize, attached: bool) -> Tensor<T> {
        let nodes = self.nodes.borrow();
        let node = &nodes[id];
        let keep = attached && !matches!(node.op, Op::Const);
        Tensor {
            shape: node.shape.clone(),
            data: Rc::clone(&node.data),
            node: keep.then(|| (self.clone(), id)),
        }
    }
}

/// Records an operation result. The result is detached when no input is
/// attached; otherwise detached inputs are pulled onto the tape as constants.
pub(crate) fn record<T: Real>(
    op: Op<T>,
    inputs: &[&Tensor<T>],
    shape: Vec<usize>,
    data: Vec<T>,
) -> Result<Tensor<T>> {
    let Some(tape) = inputs.iter().find_map(|t| t.tape().cloned()) else {
        return Ok(Tensor::detached(shape, data));
    };
    let mut ids = Vec::with_capacity(inputs.len());
    for t in inputs {
        match &t.node {
            Some((tp, id)) => {
                if !tp.same(&tape) {
                    return Err(Error::TapeMismatch);
                }
                ids.push(*id);
            }
            None => ids.push(tape.push(Node {
                op: Op::Const,
                inputs: Vec::new(),
                shape: t.shape.clone(),
                data: Rc::clone(&t.data),
            })),
        }
    }
    let data = Rc::new(data);
    let id = tape.push(Node {
        op,
        inputs: ids,
        shape: shape.clone(),
        data: Rc::clone(&data),
    });
    Ok(Tensor {
        shape,
        data,
        node: Some((tape, id)),
    })
}
