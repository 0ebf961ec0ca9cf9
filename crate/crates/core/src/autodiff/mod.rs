//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Graph`] is an append-only list of nodes, so creation order is a valid
//! topological order. Leaves are inputs (bound per evaluation), parameters
//! (stored in the graph, updated by optimizers) and constants. Evaluating a
//! graph produces an [`Evaluation`] that borrows the graph; backpropagating
//! from a scalar root produces [`Gradients`]. Neither step mutates the graph,
//! so a frozen model can be evaluated from several threads.
//!
//! All tensors are `rows × cols` matrices of `f64`; scalars are `1 × 1`.
//! The only broadcast is the bias row in [`Graph::affine`] / [`Graph::add_row`].

mod gradcheck;
mod optim;

pub use gradcheck::{check_gradient, check_leaf_gradient, GradCheckError};
pub use optim::{Adam, Optimizer, Sgd};

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};
use thiserror::Error;

pub type Matrix = Array2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("node {0} was not evaluated")]
    NotEvaluated(usize),
    #[error("binding for node {0} does not refer to an input or parameter")]
    BadBinding(usize),
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Abs(Var),
    Scale(Var, f64),
    Offset(Var, f64),
    ScaleBy(Var, Var),
    Sum(Var),
    Mean(Var),
    StopGradient(Var),
    Gather(Var, Arc<[usize]>),
    Reshape(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Affine(..) => "affine",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Square(_) => "square",
            Op::Abs(_) => "abs",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::ScaleBy(..) => "scale_by",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::StopGradient(_) => "stop_gradient",
            Op::Gather(..) => "gather",
            Op::Reshape(..) => "reshape",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match *self {
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::ScaleBy(a, b) => vec![a, b],
            Op::Affine(x, w, b) => vec![x, w, b],
            Op::Relu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Square(a)
            | Op::Abs(a)
            | Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::StopGradient(a)
            | Op::Reshape(a, _) => vec![a],
            Op::Gather(a, _) => vec![a],
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Input {
        name: String,
        differentiable: bool,
    },
    Param {
        name: String,
        value: Matrix,
        trainable: bool,
    },
    Const(Matrix),
    Op(Op),
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Values for input leaves, optionally overriding parameter values.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    values: HashMap<Var, Matrix>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, var: Var, value: Matrix) -> Self {
        self.values.insert(var, value);
        self
    }

    pub fn set(&mut self, var: Var, value: Matrix) {
        self.values.insert(var, value);
    }

    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.values.get(&var)
    }
}

pub fn scalar(v: f64) -> Matrix {
    Array2::from_elem((1, 1), v)
}

pub fn row(values: &[f64]) -> Matrix {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    fn op(&mut self, op: Op) -> Var {
        self.push(Node::Op(op))
    }

    /// Input leaf that is not differentiated.
    pub fn input(&mut self, name: impl Into<String>) -> Var {
        self.push(Node::Input {
            name: name.into(),
            differentiable: false,
        })
    }

    /// Input leaf that receives an adjoint in [`Evaluation::backward`].
    pub fn input_with_grad(&mut self, name: impl Into<String>) -> Var {
        self.push(Node::Input {
            name: name.into(),
            differentiable: true,
        })
    }

    pub fn param(&mut self, name: impl Into<String>, value: Matrix) -> Var {
        self.push(Node::Param {
            name: name.into(),
            value,
            trainable: true,
        })
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Node::Const(value))
    }

    pub fn set_trainable(&mut self, var: Var, trainable: bool) {
        if let Node::Param { trainable: t, .. } = &mut self.nodes[var.0] {
            *t = trainable;
        }
    }

    /// Marks every parameter as frozen.
    pub fn freeze_all(&mut self) {
        for n in &mut self.nodes {
            if let Node::Param { trainable, .. } = n {
                *trainable = false;
            }
        }
    }

    pub fn is_trainable(&self, var: Var) -> bool {
        matches!(
            self.nodes[var.0],
            Node::Param {
                trainable: true,
                ..
            }
        )
    }

    pub fn params(&self) -> impl Iterator<Item = (Var, &str, &Matrix)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            Node::Param { name, value, .. } => Some((Var(i), name.as_str(), value)),
            _ => None,
        })
    }

    pub fn param_value(&self, var: Var) -> Option<&Matrix> {
        match &self.nodes[var.0] {
            Node::Param { value, .. } => Some(value),
            _ => None,
        }
    }

    pub fn param_value_mut(&mut self, var: Var) -> Option<&mut Matrix> {
        match &mut self.nodes[var.0] {
            Node::Param { value, .. } => Some(value),
            _ => None,
        }
    }

    pub fn name(&self, var: Var) -> Option<&str> {
        match &self.nodes[var.0] {
            Node::Input { name, .. } | Node::Param { name, .. } => Some(name),
            _ => None,
        }
    }

    /// Smallest `|argument|` over every relu and abs node among `outputs`'
    /// ancestors, or infinity when there are none. Finite differences with a
    /// step below this distance never straddle a kink.
    pub fn kink_margin(&self, bindings: &Bindings, outputs: &[Var]) -> Result<f64, GraphError> {
        let ev = self.forward(bindings, outputs)?;
        let mut margin = f64::INFINITY;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Op(Op::Relu(a) | Op::Abs(a)) = node {
                if ev.is_evaluated(Var(i)) {
                    margin = ev.value(*a)?.iter().fold(margin, |m, v| m.min(v.abs()));
                }
            }
        }
        Ok(margin)
    }

    /// Tag of the operation producing `var`, or `leaf`.
    pub fn op_name(&self, var: Var) -> &'static str {
        match &self.nodes[var.0] {
            Node::Op(op) => op.name(),
            _ => "leaf",
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.op(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.op(Op::Sub(a, b))
    }
    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.op(Op::Mul(a, b))
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.op(Op::MatMul(a, b))
    }
    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        self.op(Op::AddRow(a, bias))
    }
    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        self.op(Op::Affine(x, w, b))
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.op(Op::Relu(a))
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.op(Op::Tanh(a))
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.op(Op::Exp(a))
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.op(Op::Ln(a))
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.op(Op::Square(a))
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.op(Op::Abs(a))
    }
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.op(Op::Scale(a, k))
    }
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        self.op(Op::Offset(a, k))
    }
    /// Multiplies `a` by the `1 × 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        self.op(Op::ScaleBy(a, s))
    }
    pub fn sum(&mut self, a: Var) -> Var {
        self.op(Op::Sum(a))
    }
    pub fn mean(&mut self, a: Var) -> Var {
        self.op(Op::Mean(a))
    }
    /// Identity on values; blocks adjoint flow into `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        self.op(Op::StopGradient(a))
    }
    /// Per-row column gather: `out[r, j] = a[r, index[j]]`.
    pub fn gather(&mut self, a: Var, index: impl Into<Arc<[usize]>>) -> Var {
        self.op(Op::Gather(a, index.into()))
    }
    /// Row-major reinterpretation with `cols` columns.
    pub fn reshape(&mut self, a: Var, cols: usize) -> Var {
        self.op(Op::Reshape(a, cols))
    }

    /// Evaluates every node needed for `outputs`.
    pub fn forward<'g>(
        &'g self,
        bindings: &Bindings,
        outputs: &[Var],
    ) -> Result<Evaluation<'g>, GraphError> {
        for var in bindings.values.keys() {
            if !matches!(
                self.nodes.get(var.0),
                Some(Node::Input { .. } | Node::Param { .. })
            ) {
                return Err(GraphError::BadBinding(var.0));
            }
        }
        let last = match outputs.iter().map(|v| v.0).max() {
            Some(l) => l,
            None => {
                return Ok(Evaluation {
                    graph: self,
                    values: Vec::new(),
                })
            }
        };
        let mut needed = vec![false; last + 1];
        for o in outputs {
            needed[o.0] = true;
        }
        for i in (0..=last).rev() {
            if needed[i] {
                if let Node::Op(op) = &self.nodes[i] {
                    for p in op.parents() {
                        needed[p.0] = true;
                    }
                }
            }
        }

        let mut values: Vec<Option<Matrix>> = vec![None; last + 1];
        for i in 0..=last {
            if !needed[i] {
                continue;
            }
            let v = match &self.nodes[i] {
                Node::Input { name, .. } => bindings
                    .get(Var(i))
                    .cloned()
                    .ok_or_else(|| GraphError::UnboundInput(name.clone()))?,
                Node::Param { value, .. } => match bindings.get(Var(i)) {
                    Some(m) if m.dim() != value.dim() => {
                        return Err(GraphError::ShapeMismatch {
                            op: "bind",
                            lhs: value.dim(),
                            rhs: m.dim(),
                        })
                    }
                    Some(m) => m.clone(),
                    None => continue,
                },
                Node::Const(_) => continue,
                Node::Op(op) => {
                    let get = |v: Var| -> &Matrix { lookup(self, &values, v) };
                    eval_op(op, get)?
                }
            };
            values[i] = Some(v);
        }
        Ok(Evaluation {
            graph: self,
            values,
        })
    }
}

fn lookup<'a>(graph: &'a Graph, values: &'a [Option<Matrix>], v: Var) -> &'a Matrix {
    if let Some(Some(m)) = values.get(v.0) {
        return m;
    }
    match &graph.nodes[v.0] {
        Node::Param { value, .. } => value,
        Node::Const(m) => m,
        _ => panic!("node {} read before evaluation", v.0),
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), GraphError> {
    if a.dim() != b.dim() {
        return Err(GraphError::ShapeMismatch {
            op,
            lhs: a.dim(),
            rhs: b.dim(),
        });
    }
    Ok(())
}

fn eval_op<'a>(op: &Op, get: impl Fn(Var) -> &'a Matrix) -> Result<Matrix, GraphError> {
    let name = op.name();
    Ok(match op {
        Op::Add(a, b) => {
            let (a, b) = (get(*a), get(*b));
            same_shape(name, a, b)?;
            a + b
        }
        Op::Sub(a, b) => {
            let (a, b) = (get(*a), get(*b));
            same_shape(name, a, b)?;
            a - b
        }
        Op::Mul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            same_shape(name, a, b)?;
            a * b
        }
        Op::MatMul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            if a.ncols() != b.nrows() {
                return Err(GraphError::ShapeMismatch {
                    op: name,
                    lhs: a.dim(),
                    rhs: b.dim(),
                });
            }
            a.dot(b)
        }
        Op::AddRow(a, b) => {
            let (a, b) = (get(*a), get(*b));
            if b.nrows() != 1 || b.ncols() != a.ncols() {
                return Err(GraphError::ShapeMismatch {
                    op: name,
                    lhs: a.dim(),
                    rhs: b.dim(),
                });
            }
            a + b
        }
        Op::Affine(x, w, b) => {
            let (x, w, b) = (get(*x), get(*w), get(*b));
            if x.ncols() != w.nrows() {
                return Err(GraphError::ShapeMismatch {
                    op: name,
                    lhs: x.dim(),
                    rhs: w.dim(),
                });
            }
            if b.nrows() != 1 || b.ncols() != w.ncols() {
                return Err(GraphError::ShapeMismatch {
                    op: name,
                    lhs: w.dim(),
                    rhs: b.dim(),
                });
            }
            x.dot(w) + b
        }
        Op::Relu(a) => get(*a).mapv(|v| v.max(0.0)),
        Op::Tanh(a) => get(*a).mapv(f64::tanh),
        Op::Exp(a) => get(*a).mapv(f64::exp),
        Op::Ln(a) => get(*a).mapv(f64::ln),
        Op::Square(a) => get(*a).mapv(|v| v * v),
        Op::Abs(a) => get(*a).mapv(f64::abs),
        Op::Scale(a, k) => get(*a) * *k,
        Op::Offset(a, k) => get(*a) + *k,
        Op::ScaleBy(a, s) => {
            let (a, s) = (get(*a), get(*s));
            if s.dim() != (1, 1) {
                return Err(GraphError::ShapeMismatch {
                    op: name,
                    lhs: a.dim(),
                    rhs: s.dim(),
                });
            }
            a * s[[0, 0]]
        }
        Op::Sum(a) => scalar(get(*a).sum()),
        Op::Mean(a) => {
            let a = get(*a);
            if a.is_empty() {
                return Err(GraphError::ShapeMismatch {
                    op: name,
                    lhs: a.dim(),
                    rhs: (1, 1),
                });
            }
            scalar(a.sum() / a.len() as f64)
        }
        Op::StopGradient(a) => get(*a).clone(),
        Op::Gather(a, idx) => {
            let a = get(*a);
            if let Some(&bad) = idx.iter().find(|&&i| i >= a.ncols()) {
                return Err(GraphError::ShapeMismatch {
                    op: name,
                    lhs: a.dim(),
                    rhs: (1, bad + 1),
                });
            }
            let mut out = Array2::zeros((a.nrows(), idx.len()));
            for (mut orow, arow) in out.rows_mut().into_iter().zip(a.rows()) {
                for (o, &i) in orow.iter_mut().zip(idx.iter()) {
                    *o = arow[i];
                }
            }
            out
        }
        Op::Reshape(a, cols) => {
            let a = get(*a);
            if *cols == 0 || !a.len().is_multiple_of(*cols) {
                return Err(GraphError::ShapeMismatch {
                    op: name,
                    lhs: a.dim(),
                    rhs: (0, *cols),
                });
            }
            let data: Vec<f64> = a.iter().copied().collect();
            Array2::from_shape_vec((data.len() / cols, *cols), data).expect("reshape")
        }
    })
}

/// Node values from one forward pass.
pub struct Evaluation<'g> {
    graph: &'g Graph,
    values: Vec<Option<Matrix>>,
}

impl<'g> Evaluation<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    fn is_evaluated(&self, v: Var) -> bool {
        match self.values.get(v.0) {
            Some(Some(_)) => true,
            Some(None) => matches!(self.graph.nodes[v.0], Node::Param { .. } | Node::Const(_)),
            None => false,
        }
    }

    pub fn value(&self, v: Var) -> Result<&Matrix, GraphError> {
        if !self.is_evaluated(v) {
            return Err(GraphError::NotEvaluated(v.0));
        }
        Ok(lookup(self.graph, &self.values, v))
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64, GraphError> {
        let m = self.value(v)?;
        if m.dim() != (1, 1) {
            return Err(GraphError::NonScalarRoot(m.dim()));
        }
        Ok(m[[0, 0]])
    }

    /// Adjoints of `root` for every trainable parameter and differentiable
    /// input reachable from it.
    pub fn backward(&self, root: Var) -> Result<Gradients, GraphError> {
        let graph = self.graph;
        self.backward_inner(root, |v| match &graph.nodes[v.0] {
            Node::Param { trainable, .. } => *trainable,
            Node::Input { differentiable, .. } => *differentiable,
            _ => false,
        })
    }

    /// Adjoints of `root` with respect to `wrt` only; every other leaf is
    /// treated as constant regardless of its trainable flag.
    pub fn backward_wrt(&self, root: Var, wrt: &[Var]) -> Result<Gradients, GraphError> {
        self.backward_inner(root, |v| wrt.contains(&v))
    }

    fn backward_inner(
        &self,
        root: Var,
        is_target: impl Fn(Var) -> bool,
    ) -> Result<Gradients, GraphError> {
        let rv = self.value(root)?;
        if rv.dim() != (1, 1) {
            return Err(GraphError::NonScalarRoot(rv.dim()));
        }
        let n = root.0 + 1;
        let mut requires = vec![false; n];
        for i in 0..n {
            if !self.is_evaluated(Var(i)) {
                continue;
            }
            requires[i] = match &self.graph.nodes[i] {
                Node::Op(Op::StopGradient(_)) => false,
                Node::Op(op) => op.parents().iter().any(|p| requires[p.0]),
                _ => is_target(Var(i)),
            };
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; n];
        if !requires[root.0] {
            return Ok(Gradients { adj });
        }
        adj[root.0] = Some(scalar(1.0));
        for i in (0..n).rev() {
            let Node::Op(op) = &self.graph.nodes[i] else {
                continue;
            };
            if !requires[i] {
                continue;
            }
            let Some(dy) = adj[i].take() else {
                continue;
            };
            let get = |v: Var| lookup(self.graph, &self.values, v);
            let mut acc = |v: Var, g: Matrix| {
                if !requires[v.0] {
                    return;
                }
                match &mut adj[v.0] {
                    Some(existing) => *existing += &g,
                    slot @ None => *slot = Some(g),
                }
            };
            let y = get(Var(i));
            match op {
                Op::Add(a, b) => {
                    acc(*a, dy.clone());
                    acc(*b, dy);
                }
                Op::Sub(a, b) => {
                    acc(*a, dy.clone());
                    acc(*b, -dy);
                }
                Op::Mul(a, b) => {
                    acc(*a, &dy * get(*b));
                    acc(*b, &dy * get(*a));
                }
                Op::MatMul(a, b) => {
                    if requires[a.0] {
                        acc(*a, dy.dot(&get(*b).t()));
                    }
                    if requires[b.0] {
                        acc(*b, get(*a).t().dot(&dy));
                    }
                }
                Op::AddRow(a, b) => {
                    acc(*b, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, dy);
                }
                Op::Affine(x, w, b) => {
                    if requires[x.0] {
                        acc(*x, dy.dot(&get(*w).t()));
                    }
                    if requires[w.0] {
                        acc(*w, get(*x).t().dot(&dy));
                    }
                    acc(*b, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Relu(a) => {
                    let mut g = dy;
                    Zip::from(&mut g).and(get(*a)).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                    acc(*a, g);
                }
                Op::Tanh(a) => {
                    let mut g = dy;
                    Zip::from(&mut g).and(y).for_each(|g, &t| *g *= 1.0 - t * t);
                    acc(*a, g);
                }
                Op::Exp(a) => acc(*a, dy * y),
                Op::Ln(a) => acc(*a, dy / get(*a)),
                Op::Square(a) => acc(*a, dy * get(*a) * 2.0),
                Op::Abs(a) => {
                    let mut g = dy;
                    Zip::from(&mut g).and(get(*a)).for_each(|g, &x| {
                        *g *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(*a, g);
                }
                Op::Scale(a, k) => acc(*a, dy * *k),
                Op::Offset(a, _) => acc(*a, dy),
                Op::ScaleBy(a, s) => {
                    let sv = get(*s)[[0, 0]];
                    if requires[s.0] {
                        let ds = (&dy * get(*a)).sum();
                        acc(*s, scalar(ds));
                    }
                    acc(*a, dy * sv);
                }
                Op::Sum(a) => {
                    let g = dy[[0, 0]];
                    acc(*a, Array2::from_elem(get(*a).dim(), g));
                }
                Op::Mean(a) => {
                    let av = get(*a);
                    let g = dy[[0, 0]] / av.len() as f64;
                    acc(*a, Array2::from_elem(av.dim(), g));
                }
                Op::StopGradient(_) => {}
                Op::Gather(a, idx) => {
                    let av = get(*a);
                    let mut g = Array2::zeros(av.dim());
                    for (mut grow, drow) in g.rows_mut().into_iter().zip(dy.rows()) {
                        for (&d, &j) in drow.iter().zip(idx.iter()) {
                            grow[j] += d;
                        }
                    }
                    acc(*a, g);
                }
                Op::Reshape(a, _) => {
                    let shape = get(*a).dim();
                    let data: Vec<f64> = dy.iter().copied().collect();
                    acc(*a, Array2::from_shape_vec(shape, data).expect("reshape"));
                }
            }
        }
        // only leaves keep their adjoints
        for (i, slot) in adj.iter_mut().enumerate() {
            if matches!(self.graph.nodes[i], Node::Op(_)) {
                *slot = None;
            }
        }
        Ok(Gradients { adj })
    }
}

/// Leaf adjoints from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    adj: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adj.get(v.0).and_then(|a| a.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Matrix)> {
        self.adj
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.as_ref().map(|m| (Var(i), m)))
    }
}
