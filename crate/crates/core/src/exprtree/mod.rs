//! Expression trees for multi-gene symbolic regression.
//!
//! A gene is a tree over a fixed set of sixteen functions with three kinds
//! of leaves: constants, plain feature variables and LCF leaves. An LCF leaf
//! evaluates the affine map `a + b·x` over *all* features of a sample, so a
//! gene can see a linearly transformed feature space.
//!
//! Feature indices are zero-based in memory. The text form (see [`text`])
//! prints them one-based, the way the features are usually named.

mod random;
pub mod text;

pub use random::{pick_node, random_tree, LeafMix, Method, TreeGenConfig};
pub use text::{parse_node, ParseError};

use nalgebra::DMatrix;
use std::fmt;
use thiserror::Error;

/// Structural errors raised by tree queries and edits.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("feature index {index} out of range for dimensionality {d}")]
    IndexOutOfRange { index: usize, d: usize },
    #[error("LCF weight vector has length {got}, expected {d}")]
    WeightLength { got: usize, d: usize },
    #[error("{kind} expects {expected} children, got {got}")]
    Arity {
        kind: FunctionKind,
        expected: usize,
        got: usize,
    },
    #[error("locator {0} does not address a node")]
    StaleLocator(usize),
}

/// The function set available to evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FunctionKind {
    Add,
    Sub,
    Mul,
    Sin,
    Cos,
    Exp,
    LogSig,
    Tanh,
    Sinc,
    Softplus,
    Gauss,
    Pow2,
    Pow3,
    Pow4,
    Pow5,
    Pow6,
}

/// Which logistic form `LogSig` computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogSigForm {
    /// `1 / (1 + e^x)`, decreasing.
    #[default]
    Decreasing,
    /// `1 / (1 + e^-x)`, the usual increasing logistic.
    Increasing,
}

/// Evaluation-time semantics shared by every tree of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Primitives {
    pub logsig: LogSigForm,
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 16] = [
        FunctionKind::Add,
        FunctionKind::Sub,
        FunctionKind::Mul,
        FunctionKind::Sin,
        FunctionKind::Cos,
        FunctionKind::Exp,
        FunctionKind::LogSig,
        FunctionKind::Tanh,
        FunctionKind::Sinc,
        FunctionKind::Softplus,
        FunctionKind::Gauss,
        FunctionKind::Pow2,
        FunctionKind::Pow3,
        FunctionKind::Pow4,
        FunctionKind::Pow5,
        FunctionKind::Pow6,
    ];

    pub fn arity(self) -> usize {
        match self {
            FunctionKind::Add | FunctionKind::Sub | FunctionKind::Mul => 2,
            _ => 1,
        }
    }

    /// Name used by the text format.
    pub fn name(self) -> &'static str {
        match self {
            FunctionKind::Add => "add",
            FunctionKind::Sub => "sub",
            FunctionKind::Mul => "mul",
            FunctionKind::Sin => "sin",
            FunctionKind::Cos => "cos",
            FunctionKind::Exp => "exp",
            FunctionKind::LogSig => "logsig",
            FunctionKind::Tanh => "tanh",
            FunctionKind::Sinc => "sinc",
            FunctionKind::Softplus => "softplus",
            FunctionKind::Gauss => "gauss",
            FunctionKind::Pow2 => "pow2",
            FunctionKind::Pow3 => "pow3",
            FunctionKind::Pow4 => "pow4",
            FunctionKind::Pow5 => "pow5",
            FunctionKind::Pow6 => "pow6",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// Scalar value of a unary function. Binary kinds are rejected by
    /// `debug_assert`; use [`FunctionKind::binary`] for those.
    pub fn unary(self, x: f64, prims: &Primitives) -> f64 {
        match self {
            FunctionKind::Sin => x.sin(),
            FunctionKind::Cos => x.cos(),
            FunctionKind::Exp => x.exp(),
            FunctionKind::LogSig => match prims.logsig {
                LogSigForm::Decreasing => 1.0 / (1.0 + x.exp()),
                LogSigForm::Increasing => 1.0 / (1.0 + (-x).exp()),
            },
            FunctionKind::Tanh => x.tanh(),
            FunctionKind::Sinc => {
                if x == 0.0 {
                    1.0
                } else {
                    x.sin() / x
                }
            }
            // ln(1 + e^x) without overflowing for large x
            FunctionKind::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            FunctionKind::Gauss => (-x * x).exp(),
            FunctionKind::Pow2 => x * x,
            FunctionKind::Pow3 => x * x * x,
            FunctionKind::Pow4 => x.powi(4),
            FunctionKind::Pow5 => x.powi(5),
            FunctionKind::Pow6 => x.powi(6),
            FunctionKind::Add | FunctionKind::Sub | FunctionKind::Mul => {
                debug_assert!(false, "{self} is binary");
                f64::NAN
            }
        }
    }

    pub fn binary(self, a: f64, b: f64) -> f64 {
        match self {
            FunctionKind::Add => a + b,
            FunctionKind::Sub => a - b,
            FunctionKind::Mul => a * b,
            _ => {
                debug_assert!(false, "{self} is unary");
                f64::NAN
            }
        }
    }

    /// Applies the function elementwise, writing into `first`.
    pub(crate) fn apply_in_place(
        self,
        first: &mut [f64],
        second: Option<&[f64]>,
        prims: &Primitives,
    ) {
        match second {
            Some(other) => {
                for (a, &b) in first.iter_mut().zip(other) {
                    *a = self.binary(*a, b);
                }
            }
            None => {
                for a in first.iter_mut() {
                    *a = self.unary(*a, prims);
                }
            }
        }
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The weights `(a, b)` of an LCF leaf: `lcf(x) = a + b·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LcfWeights {
    pub a: f64,
    pub b: Vec<f64>,
}

impl LcfWeights {
    /// Weights that make the leaf equal to feature `index`.
    pub fn identity(index: usize, d: usize) -> Self {
        let mut b = vec![0.0; d];
        b[index] = 1.0;
        LcfWeights { a: 0.0, b }
    }

    pub fn is_identity_for(&self, index: usize) -> bool {
        self.a == 0.0
            && self
                .b
                .iter()
                .enumerate()
                .all(|(j, &w)| if j == index { w == 1.0 } else { w == 0.0 })
    }

    /// Number of scalar weights, `1 + d`.
    pub fn len(&self) -> usize {
        1 + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.iter().all(|w| w.is_finite())
    }

    /// Writes `[a, b1, .., bd]` to the end of `out`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.push(self.a);
        out.extend_from_slice(&self.b);
    }

    /// Inverse of [`LcfWeights::flatten_into`].
    pub fn from_flat(flat: &[f64]) -> Self {
        LcfWeights {
            a: flat[0],
            b: flat[1..].to_vec(),
        }
    }

    pub fn eval(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let n = x.nrows();
        let mut out = vec![self.a; n];
        for (j, &w) in self.b.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(column(x, j)) {
                *o += w * v;
            }
        }
        out
    }
}

/// Column `j` of a column-major matrix as a slice.
pub(crate) fn column(x: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[j * n..(j + 1) * n]
}

/// A node of an expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Function { kind: FunctionKind, children: Vec<Node> },
    Const(f64),
    Var(usize),
    Lcf { index: usize, weights: LcfWeights },
}

/// Preorder position of a node inside a tree; the root is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeLocator(pub usize);

impl Node {
    pub fn func(kind: FunctionKind, children: Vec<Node>) -> Node {
        debug_assert_eq!(children.len(), kind.arity());
        Node::Function { kind, children }
    }

    pub fn unary(kind: FunctionKind, child: Node) -> Node {
        Node::func(kind, vec![child])
    }

    pub fn binary(kind: FunctionKind, left: Node, right: Node) -> Node {
        Node::func(kind, vec![left, right])
    }

    /// An LCF leaf with identity weights for feature `index`.
    pub fn lcf(index: usize, d: usize) -> Node {
        Node::Lcf {
            index,
            weights: LcfWeights::identity(index, d),
        }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self, Node::Function { .. })
    }

    pub fn children(&self) -> &[Node] {
        match self {
            Node::Function { children, .. } => children,
            _ => &[],
        }
    }

    /// Edge depth: a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Node::Function { children, .. } => {
                1 + children.iter().map(Node::depth).max().unwrap_or(0)
            }
            _ => 0,
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(Node::node_count).sum::<usize>()
    }

    /// Checks arity and that every feature index and weight vector fits `d`.
    pub fn validate(&self, d: usize) -> Result<(), TreeError> {
        match self {
            Node::Function { kind, children } => {
                if children.len() != kind.arity() {
                    return Err(TreeError::Arity {
                        kind: *kind,
                        expected: kind.arity(),
                        got: children.len(),
                    });
                }
                children.iter().try_for_each(|c| c.validate(d))
            }
            Node::Const(_) => Ok(()),
            Node::Var(index) => {
                if *index < d {
                    Ok(())
                } else {
                    Err(TreeError::IndexOutOfRange { index: *index, d })
                }
            }
            Node::Lcf { index, weights } => {
                if *index >= d {
                    Err(TreeError::IndexOutOfRange { index: *index, d })
                } else if weights.b.len() != d {
                    Err(TreeError::WeightLength {
                        got: weights.b.len(),
                        d,
                    })
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Preorder walk.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Preorder walk over LCF leaves, allowing their weights to change.
    pub fn for_each_lcf_mut(&mut self, f: &mut impl FnMut(usize, &mut LcfWeights)) {
        match self {
            Node::Function { children, .. } => {
                for c in children {
                    c.for_each_lcf_mut(f);
                }
            }
            Node::Lcf { index, weights } => f(*index, weights),
            _ => {}
        }
    }

    /// Preorder walk over constant leaves.
    pub fn for_each_const_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        match self {
            Node::Function { children, .. } => {
                for c in children {
                    c.for_each_const_mut(f);
                }
            }
            Node::Const(v) => f(v),
            _ => {}
        }
    }

    pub fn subtree(&self, loc: NodeLocator) -> Option<&Node> {
        self.locate(loc.0).map(|(node, _)| node)
    }

    /// Depth (distance from the root) of the addressed node.
    pub fn depth_of(&self, loc: NodeLocator) -> Option<usize> {
        self.locate(loc.0).map(|(_, depth)| depth)
    }

    fn locate(&self, mut target: usize) -> Option<(&Node, usize)> {
        let mut node = self;
        let mut depth = 0;
        loop {
            if target == 0 {
                return Some((node, depth));
            }
            target -= 1;
            let mut next = None;
            for c in node.children() {
                let size = c.node_count();
                if target < size {
                    next = Some(c);
                    break;
                }
                target -= size;
            }
            node = next?;
            depth += 1;
        }
    }

    fn locate_mut(&mut self, mut target: usize) -> Option<&mut Node> {
        if target == 0 {
            return Some(self);
        }
        target -= 1;
        match self {
            Node::Function { children, .. } => {
                for c in children.iter_mut() {
                    let size = c.node_count();
                    if target < size {
                        return c.locate_mut(target);
                    }
                    target -= size;
                }
                None
            }
            _ => None,
        }
    }

    /// Evaluates the tree on every row of `x` without validating indices.
    pub(crate) fn eval_unchecked(&self, x: &DMatrix<f64>, prims: &Primitives) -> Vec<f64> {
        match self {
            Node::Const(v) => vec![*v; x.nrows()],
            Node::Var(j) => column(x, *j).to_vec(),
            Node::Lcf { weights, .. } => weights.eval(x),
            Node::Function { kind, children } => {
                let mut first = children[0].eval_unchecked(x, prims);
                if kind.arity() == 2 {
                    let second = children[1].eval_unchecked(x, prims);
                    kind.apply_in_place(&mut first, Some(&second), prims);
                } else {
                    kind.apply_in_place(&mut first, None, prims);
                }
                first
            }
        }
    }
}

/// Returns a copy of `root` with the node at `loc` replaced by `sub`.
pub fn replace_subtree(root: &Node, loc: NodeLocator, sub: Node) -> Result<Node, TreeError> {
    let mut out = root.clone();
    let slot = out
        .locate_mut(loc.0)
        .ok_or(TreeError::StaleLocator(loc.0))?;
    *slot = sub;
    Ok(out)
}

/// Evaluates `root` on each row of `x` using the default primitives.
pub fn eval_batch(root: &Node, x: &DMatrix<f64>) -> Result<Vec<f64>, TreeError> {
    eval_batch_with(root, x, &Primitives::default())
}

pub fn eval_batch_with(
    root: &Node,
    x: &DMatrix<f64>,
    prims: &Primitives,
) -> Result<Vec<f64>, TreeError> {
    root.validate(x.ncols())?;
    Ok(root.eval_unchecked(x, prims))
}

/// One tree of an individual, with cached structural measures.
#[derive(Debug, Clone, PartialEq)]
pub struct Gene {
    root: Node,
    depth: usize,
    node_count: usize,
}

impl Gene {
    pub fn new(root: Node) -> Self {
        let depth = root.depth();
        let node_count = root.node_count();
        Gene {
            root,
            depth,
            node_count,
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn into_root(self) -> Node {
        self.root
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn replace(&self, loc: NodeLocator, sub: Node) -> Result<Gene, TreeError> {
        replace_subtree(&self.root, loc, sub).map(Gene::new)
    }

    /// Weight edits leave the structure (and so the caches) untouched.
    pub fn for_each_lcf_mut(&mut self, f: &mut impl FnMut(usize, &mut LcfWeights)) {
        self.root.for_each_lcf_mut(f);
    }

    pub fn for_each_const_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        self.root.for_each_const_mut(f);
    }

    pub fn leaf_counts(&self) -> LeafCounts {
        let mut counts = LeafCounts::default();
        self.root.visit(&mut |n| match n {
            Node::Const(_) => counts.consts += 1,
            Node::Var(_) => counts.vars += 1,
            Node::Lcf { .. } => counts.lcfs += 1,
            Node::Function { .. } => {}
        });
        counts
    }

    pub fn eval(&self, x: &DMatrix<f64>, prims: &Primitives) -> Vec<f64> {
        self.root.eval_unchecked(x, prims)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LeafCounts {
    pub consts: usize,
    pub vars: usize,
    pub lcfs: usize,
}

impl std::ops::AddAssign for LeafCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.consts += rhs.consts;
        self.vars += rhs.vars;
        self.lcfs += rhs.lcfs;
    }
}
