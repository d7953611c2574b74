//! Wengert-list tape for reverse-mode differentiation of scalar programs.
//!
//! Every differentiable operation pushes one node holding the ids of its
//! variable parents and the local partial derivative with respect to each.
//! Constant operands are never recorded, so a program that touches no tape
//! variable costs nothing.

use std::cell::RefCell;
use std::fmt;

use super::AutodiffError;

/// Operation tag stored with every node. Used for diagnostics only; the
/// backward pass needs nothing but the recorded partials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Powf,
    Sqrt,
    Abs,
    Sigmoid,
    Softplus,
    ClampMin,
    Spike,
    Round,
    WeightedSum,
    Custom,
}

#[derive(Default)]
struct Nodes {
    kinds: Vec<OpKind>,
    // (offset into `parents`/`partials`, parent count)
    spans: Vec<(u32, u32)>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    checkpoints: Vec<usize>,
}

/// Single-owner recording of a differentiable computation.
///
/// Nodes are appended in evaluation order, so every node's parents precede
/// it and a single reverse sweep visits each node exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Nodes>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes = self.nodes.borrow();
        f.debug_struct("Tape").field("len", &nodes.kinds.len()).field("checkpoints", &nodes.checkpoints).finish()
    }
}

#[derive(Clone, Copy)]
pub(crate) struct NodeRef<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: u32,
}

/// A scalar value that may be tracked on a [`Tape`].
///
/// A `Var` without a node is a constant: it participates in arithmetic but
/// receives and contributes no gradient.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) value: f64,
    pub(crate) node: Option<NodeRef<'t>>,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "Var({}, #{})", self.value, n.id),
            None => write!(f, "Var({}, const)", self.value),
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Self {
        Var { value, node: None }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Index of the node on its tape, `None` for constants.
    pub fn node_id(&self) -> Option<usize> {
        self.node.map(|n| n.id as usize)
    }

    pub fn is_constant(&self) -> bool {
        self.node.is_none()
    }

    /// True when this variable lives on `tape`.
    pub fn belongs_to(&self, tape: &Tape) -> bool {
        self.node.is_some_and(|n| std::ptr::eq(n.tape, tape))
    }

    /// Drops the tape link, keeping the value.
    pub fn detach(self) -> Var<'static> {
        Var::constant(self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let tape = Tape::default();
        {
            let mut n = tape.nodes.borrow_mut();
            n.kinds.reserve(nodes);
            n.spans.reserve(nodes);
            n.parents.reserve(nodes * 2);
            n.partials.reserve(nodes * 2);
        }
        tape
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Creates an independent variable (a leaf).
    pub fn var(&self, value: f64) -> Var<'_> {
        let id = self.push(OpKind::Input, &[], &[]);
        Var { value, node: Some(NodeRef { tape: self, id }) }
    }

    /// Records an arbitrary operation with caller-supplied local partials.
    ///
    /// Constant parents are accepted and skipped. Parents recorded on a
    /// different tape are rejected.
    pub fn record<'t>(
        &'t self,
        kind: OpKind,
        parents: &[Var<'t>],
        value: f64,
        partials: &[f64],
    ) -> Result<Var<'t>, AutodiffError> {
        if parents.len() != partials.len() {
            return Err(AutodiffError::ArityMismatch { parents: parents.len(), partials: partials.len() });
        }
        let mut ids = Vec::with_capacity(parents.len());
        let mut ds = Vec::with_capacity(parents.len());
        for (p, &d) in parents.iter().zip(partials) {
            if let Some(n) = p.node {
                if !std::ptr::eq(n.tape, self) {
                    return Err(AutodiffError::ForeignTape);
                }
                ids.push(n.id);
                ds.push(d);
            }
        }
        let id = self.push(kind, &ids, &ds);
        Ok(Var { value, node: Some(NodeRef { tape: self, id }) })
    }

    pub(crate) fn push(&self, kind: OpKind, parents: &[u32], partials: &[f64]) -> u32 {
        let mut n = self.nodes.borrow_mut();
        let id = n.kinds.len();
        assert!(id < u32::MAX as usize, "tape exceeds u32 node capacity");
        let offset = n.parents.len() as u32;
        n.kinds.push(kind);
        n.spans.push((offset, parents.len() as u32));
        n.parents.extend_from_slice(parents);
        n.partials.extend_from_slice(partials);
        id as u32
    }

    /// Marks the current tape position as a segment boundary.
    pub fn mark_checkpoint(&self) -> usize {
        let mut n = self.nodes.borrow_mut();
        let at = n.kinds.len();
        n.checkpoints.push(at);
        at
    }

    pub fn checkpoints(&self) -> Vec<usize> {
        self.nodes.borrow().checkpoints.clone()
    }

    pub fn op_kind(&self, id: usize) -> Option<OpKind> {
        self.nodes.borrow().kinds.get(id).copied()
    }

    /// Parent ids and partials of node `id`.
    pub fn node(&self, id: usize) -> Option<(OpKind, Vec<usize>, Vec<f64>)> {
        let n = self.nodes.borrow();
        let kind = *n.kinds.get(id)?;
        let (off, len) = n.spans[id];
        let range = off as usize..(off + len) as usize;
        Some((kind, n.parents[range.clone()].iter().map(|&p| p as usize).collect(), n.partials[range].to_vec()))
    }

    /// Adjoints of every node with respect to `output`.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, AutodiffError> {
        self.backward_seeded(&[(output, 1.0)])
    }

    /// Vector-Jacobian product: seeds each listed variable with the given
    /// adjoint and propagates all of them in one reverse sweep.
    pub fn backward_seeded(&self, seeds: &[(Var<'_>, f64)]) -> Result<Gradients, AutodiffError> {
        let n = self.nodes.borrow();
        let mut adj = vec![0.0; n.kinds.len()];
        let mut start = 0usize;
        for (v, s) in seeds {
            match v.node {
                Some(node) if std::ptr::eq(node.tape, self) => {
                    adj[node.id as usize] += s;
                    start = start.max(node.id as usize + 1);
                }
                Some(_) => return Err(AutodiffError::ForeignTape),
                None => {
                    if seeds.len() == 1 {
                        return Err(AutodiffError::OutputNotOnTape);
                    }
                }
            }
        }
        for id in (0..start).rev() {
            let a = adj[id];
            if a == 0.0 {
                continue;
            }
            let (off, len) = n.spans[id];
            let off = off as usize;
            for k in off..off + len as usize {
                adj[n.parents[k] as usize] += a * n.partials[k];
            }
        }
        Ok(Gradients { adjoints: adj })
    }
}

/// Result of a backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// d(output)/d(v); zero for constants and for nodes the output does not
    /// depend on.
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        v.node.and_then(|n| self.adjoints.get(n.id as usize).copied()).unwrap_or(0.0)
    }

    pub fn by_id(&self, id: usize) -> f64 {
        self.adjoints.get(id).copied().unwrap_or(0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.adjoints
    }
}
