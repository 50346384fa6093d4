//! Wengert tape over 2-D `f64` arrays.
//!
//! Every value on the tape is a matrix; scalars are `1x1`. Binary elementwise
//! operations accept a right-hand side that broadcasts along rows (`1 x m`),
//! columns (`n x 1`) or both (`1 x 1`). Anything more general is out of scope.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{AutodiffError, Result};

pub type Mat = Array2<f64>;

/// Identifies one array inside one [`ParameterSet`](crate::ParameterSet).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub set: u64,
    pub index: usize,
}

/// An operation whose forward pass is computed outside the tape and whose
/// vector-Jacobian product is supplied by the implementor.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// One entry per input; `None` means no gradient flows to that input.
    fn backward(&self, inputs: &[&Mat], output: &Mat, grad_output: &Mat) -> Vec<Option<Mat>>;
}

enum Op {
    Leaf,
    Param(ParamKey),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Concat(Vec<usize>),
    ConcatRows(Vec<usize>),
    Slice(usize, usize),
    Gather(usize, Rc<Vec<usize>>),
    BroadcastRows(usize),
    Softplus(usize, Rc<Mat>),
    Sigmoid(usize),
    Tanh(usize),
    Log(usize),
    Exp(usize),
    Sqrt(usize),
    Square(usize),
    Abs(usize),
    Clamp(usize, f64, f64),
    Cross(usize, usize),
    RowDot(usize, usize),
    RowNorm(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    SumCols(usize),
    MaxRows(usize, Vec<usize>),
    MinRows(usize, Vec<usize>),
    MaxCols(usize, Vec<usize>),
    Custom(Vec<usize>, Box<dyn CustomOp>),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Param(_) => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) | Cross(a, b)
            | RowDot(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | Offset(a) | Slice(a, _) | Gather(a, _) | BroadcastRows(a)
            | Softplus(a, _) | Sigmoid(a) | Tanh(a) | Log(a) | Exp(a) | Sqrt(a) | Square(a)
            | Abs(a) | Clamp(a, _, _) | RowNorm(a) | Sum(a) | Mean(a) | SumRows(a)
            | SumCols(a) | MaxRows(a, _) | MinRows(a, _) | MaxCols(a, _) => vec![*a],
            Concat(v) | ConcatRows(v) | Custom(v, _) => v.clone(),
        }
    }
}

struct Node {
    value: Rc<Mat>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass. Not `Sync`: a tape belongs to
/// the thread that builds it.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamKey, usize>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn dim(m: &Mat) -> (usize, usize) {
    m.dim()
}

fn check_finite(m: &Mat, op: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AutodiffError::NonFinite(op))
    }
}

/// Sums `g` down to `shape`, undoing a row/column broadcast.
fn reduce_to(g: Mat, shape: (usize, usize)) -> Mat {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn broadcastable(lhs: (usize, usize), rhs: (usize, usize)) -> bool {
    (rhs.0 == lhs.0 || rhs.0 == 1) && (rhs.1 == lhs.1 || rhs.1 == 1)
}

#[inline]
pub(crate) fn softplus_scalar(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let sp = x.max(0.0) + e.ln_1p();
    let sig = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (sp, sig)
}

#[inline]
fn sigmoid_scalar(x: f64) -> f64 {
    softplus_scalar(x).1
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

    fn push(&self, value: Mat, op: Op) -> Var<'_> {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            other => {
                let nodes = self.nodes.borrow();
                other.parents().iter().any(|&p| nodes[p].requires_grad)
            }
        };
        self.push_rc(Rc::new(value), op, requires_grad)
    }

    fn push_rc(&self, value: Rc<Mat>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    fn value_of(&self, id: usize) -> Rc<Mat> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Mat) -> Result<Var<'_>> {
        check_finite(&value, "constant")?;
        Ok(self.push(value, Op::Leaf))
    }

    pub fn scalar(&self, x: f64) -> Result<Var<'_>> {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Inserts (or reuses) the leaf for a trainable array.
    pub fn param(&self, key: ParamKey, value: &Mat) -> Result<Var<'_>> {
        if let Some(&id) = self.params.borrow().get(&key) {
            return Ok(Var { tape: self, id });
        }
        check_finite(value, "param")?;
        let var = self.push(value.clone(), Op::Param(key));
        self.params.borrow_mut().insert(key, var.id);
        Ok(var)
    }

    /// Registers a custom operation whose output was computed by the caller.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        output: Mat,
        op: Box<dyn CustomOp>,
    ) -> Result<Var<'t>> {
        check_finite(&output, op.name())?;
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(output, Op::Custom(ids, op)))
    }

    /// Reverse pass from a scalar `loss`. Gradients of parameters are always
    /// returned; gradients of the vars in `retain` are returned on request.
    pub fn backward_with(&self, loss: Var<'_>, retain: &[Var<'_>]) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.dim() != (1, 1) {
            return Err(AutodiffError::NotScalar(root.value.dim()));
        }
        check_finite(&root.value, "loss")?;

        let keep: std::collections::HashSet<usize> = retain.iter().map(|v| v.id).collect();
        let mut out = Gradients::default();
        let mut grads: Vec<Option<Mat>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if keep.contains(&id) {
                out.vars.insert(id, g.clone());
            }
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let val = |i: usize| -> &Mat { &nodes[i].value };
            let wants = |i: usize| nodes[i].requires_grad;
            let mut acc = |i: usize, delta: Mat| {
                if !wants(i) {
                    return;
                }
                match &mut grads[i] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            use Op::*;
            match &node.op {
                Leaf => {}
                Param(key) => {
                    match out.params.get_mut(key) {
                        Some(existing) => *existing += &g,
                        None => {
                            out.params.insert(*key, g);
                        }
                    }
                }
                Add(a, b) => {
                    let bs = dim(val(*b));
                    if wants(*b) {
                        acc(*b, reduce_to(g.clone(), bs));
                    }
                    acc(*a, g);
                }
                Sub(a, b) => {
                    let bs = dim(val(*b));
                    if wants(*b) {
                        acc(*b, -reduce_to(g.clone(), bs));
                    }
                    acc(*a, g);
                }
                Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if wants(*a) {
                        let bb = bv.broadcast(av.dim()).expect("checked at construction");
                        acc(*a, &g * &bb);
                    }
                    if wants(*b) {
                        acc(*b, reduce_to(&g * av, bv.dim()));
                    }
                }
                Div(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let bb = bv.broadcast(av.dim()).expect("checked at construction");
                    if wants(*a) {
                        acc(*a, &g / &bb);
                    }
                    if wants(*b) {
                        let mut d = g.clone();
                        Zip::from(&mut d)
                            .and(av)
                            .and(&bb)
                            .for_each(|d, &x, &y| *d = -*d * x / (y * y));
                        acc(*b, reduce_to(d, bv.dim()));
                    }
                }
                Neg(a) => acc(*a, -g),
                Scale(a, c) => acc(*a, g * *c),
                Offset(a) => acc(*a, g),
                MatMul(a, b) => {
                    if wants(*a) {
                        acc(*a, g.dot(&val(*b).t()));
                    }
                    if wants(*b) {
                        acc(*b, val(*a).t().dot(&g));
                    }
                }
                Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        if wants(p) {
                            acc(p, g.slice(s![.., col..col + w]).to_owned());
                        }
                        col += w;
                    }
                }
                ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let h = val(p).nrows();
                        if wants(p) {
                            acc(p, g.slice(s![row..row + h, ..]).to_owned());
                        }
                        row += h;
                    }
                }
                Slice(a, start) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    let w = g.ncols();
                    d.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(*a, d);
                }
                Gather(a, idx) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut row = d.row_mut(i);
                        row += &g.row(r);
                    }
                    acc(*a, d);
                }
                BroadcastRows(a) => acc(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
                Softplus(a, sig) => acc(*a, g * &**sig),
                Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&*node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(*a, d);
                }
                Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&*node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(*a, d);
                }
                Log(a) => acc(*a, g / val(*a)),
                Exp(a) => acc(*a, g * &*node.value),
                Sqrt(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&*node.value).for_each(|d, &y| {
                        *d = if y > 0.0 { *d / (2.0 * y) } else { 0.0 };
                    });
                    acc(*a, d);
                }
                Square(a) => acc(*a, g * val(*a) * 2.0),
                Abs(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                        *d *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(*a, d);
                }
                Clamp(a, lo, hi) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = 0.0;
                        }
                    });
                    acc(*a, d);
                }
                Cross(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if wants(*a) {
                        acc(*a, cross_rows(bv, &g));
                    }
                    if wants(*b) {
                        acc(*b, cross_rows(&g, av));
                    }
                }
                RowDot(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let gb = g.broadcast(av.dim()).expect("n x 1 broadcast");
                    if wants(*a) {
                        acc(*a, &gb * bv);
                    }
                    if wants(*b) {
                        acc(*b, &gb * av);
                    }
                }
                RowNorm(a) => {
                    let av = val(*a);
                    let mut d = av.clone();
                    for ((mut row, &n), &gi) in d
                        .rows_mut()
                        .into_iter()
                        .zip(node.value.iter())
                        .zip(g.iter())
                    {
                        if n > 0.0 {
                            row *= gi / n;
                        } else {
                            row.fill(0.0);
                        }
                    }
                    acc(*a, d);
                }
                Sum(a) => acc(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
                Mean(a) => {
                    let shape = val(*a).dim();
                    let n = (shape.0 * shape.1) as f64;
                    acc(*a, Array2::from_elem(shape, g[[0, 0]] / n));
                }
                SumRows(a) => {
                    let shape = val(*a).dim();
                    acc(*a, g.broadcast(shape).expect("1 x m broadcast").to_owned());
                }
                SumCols(a) => {
                    let shape = val(*a).dim();
                    acc(*a, g.broadcast(shape).expect("n x 1 broadcast").to_owned());
                }
                MaxRows(a, arg) | MinRows(a, arg) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    for (j, &i) in arg.iter().enumerate() {
                        d[[i, j]] += g[[0, j]];
                    }
                    acc(*a, d);
                }
                MaxCols(a, arg) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    for (i, &j) in arg.iter().enumerate() {
                        d[[i, j]] += g[[i, 0]];
                    }
                    acc(*a, d);
                }
                Custom(inputs, op) => {
                    let ins: Vec<&Mat> = inputs.iter().map(|&i| val(i)).collect();
                    let deltas = op.backward(&ins, &node.value, &g);
                    for (&i, d) in inputs.iter().zip(deltas) {
                        if let Some(d) = d {
                            acc(i, d);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.backward_with(loss, &[])
    }
}

fn cross_rows(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    let mut out = Array2::zeros((n, 3));
    for i in 0..n {
        let (ax, ay, az) = (a[[i, 0]], a[[i, 1]], a[[i, 2]]);
        let (bx, by, bz) = (b[[i, 0]], b[[i, 1]], b[[i, 2]]);
        out[[i, 0]] = ay * bz - az * by;
        out[[i, 1]] = az * bx - ax * bz;
        out[[i, 2]] = ax * by - ay * bx;
    }
    out
}

/// Result of a reverse pass.
#[derive(Debug, Default)]
pub struct Gradients {
    params: HashMap<ParamKey, Mat>,
    vars: HashMap<usize, Mat>,
}

impl Gradients {
    pub fn param(&self, key: ParamKey) -> Option<&Mat> {
        self.params.get(&key)
    }

    /// Gradient of a var listed in `retain`; `None` if it was not reached.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Mat> {
        self.vars.get(&var.id)
    }
}

macro_rules! unary {
    ($name:ident, $opname:literal, $variant:ident, $f:expr) => {
        pub fn $name(self) -> Result<Var<'t>> {
            let v = self.value();
            let out = v.mapv($f);
            check_finite(&out, $opname)?;
            Ok(self.tape.push(out, Op::$variant(self.id)))
        }
    };
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Mat> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Value of a `1x1` var.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if !broadcastable(a.dim(), b.dim()) {
            return Err(AutodiffError::ShapeMismatch {
                op: name,
                lhs: a.dim(),
                rhs: b.dim(),
            });
        }
        let bb = b.broadcast(a.dim()).expect("checked");
        let out = Zip::from(&*a).and(&bb).map_collect(|&x, &y| f(x, y));
        check_finite(&out, name)?;
        Ok(self.tape.push(out, op(self.id, other.id)))
    }

    /// Elementwise sum; `other` may broadcast (`1xm`, `nx1`, `1x1`).
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |x, y| x / y, Op::Div)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        let out = self.value().mapv(|x| -x);
        Ok(self.tape.push(out, Op::Neg(self.id)))
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        let out = self.value().mapv(|x| x * c);
        check_finite(&out, "scale")?;
        Ok(self.tape.push(out, Op::Scale(self.id, c)))
    }

    /// Adds a constant to every element.
    pub fn offset(self, c: f64) -> Result<Var<'t>> {
        let out = self.value().mapv(|x| x + c);
        check_finite(&out, "offset")?;
        Ok(self.tape.push(out, Op::Offset(self.id)))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.ncols() != b.nrows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: a.dim(),
                rhs: b.dim(),
            });
        }
        let out = a.dot(&*b);
        check_finite(&out, "matmul")?;
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id)))
    }

    /// Column-wise concatenation.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or(AutodiffError::ShapeMismatch {
            op: "concat",
            lhs: (0, 0),
            rhs: (0, 0),
        })?;
        let values: Vec<Rc<Mat>> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].nrows();
        for v in &values {
            if v.nrows() != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: values[0].dim(),
                    rhs: v.dim(),
                });
            }
        }
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(first.tape.push(out, Op::Concat(ids)))
    }

    /// Row-wise concatenation (stacking).
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or(AutodiffError::ShapeMismatch {
            op: "concat_rows",
            lhs: (0, 0),
            rhs: (0, 0),
        })?;
        let values: Vec<Rc<Mat>> = parts.iter().map(|p| p.value()).collect();
        let cols = values[0].ncols();
        for v in &values {
            if v.ncols() != cols {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: values[0].dim(),
                    rhs: v.dim(),
                });
            }
        }
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(first.tape.push(out, Op::ConcatRows(ids)))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        if start + len > v.ncols() || len == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                lhs: v.dim(),
                rhs: (start, len),
            });
        }
        let out = v.slice(s![.., start..start + len]).to_owned();
        Ok(self.tape.push(out, Op::Slice(self.id, start)))
    }

    /// Rows selected by `indices` (repeats allowed).
    pub fn gather_rows(self, indices: Rc<Vec<usize>>) -> Result<Var<'t>> {
        let v = self.value();
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.nrows()) {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather_rows",
                lhs: v.dim(),
                rhs: (bad, 0),
            });
        }
        let out = v.select(Axis(0), &indices);
        Ok(self.tape.push(out, Op::Gather(self.id, indices)))
    }

    /// Repeats a `1xm` row `n` times.
    pub fn broadcast_rows(self, n: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.nrows() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_rows",
                lhs: v.dim(),
                rhs: (n, v.ncols()),
            });
        }
        let out = v.broadcast((n, v.ncols())).expect("1 x m").to_owned();
        Ok(self.tape.push(out, Op::BroadcastRows(self.id)))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Result<Var<'t>> {
        Ok(self.softplus_with_slope()?.0)
    }

    /// Softplus together with its derivative `sigmoid(x)`; the slope is a
    /// regular tape node sharing the buffer computed in the forward pass.
    pub fn softplus_with_slope(self) -> Result<(Var<'t>, Var<'t>)> {
        let v = self.value();
        let mut sp = Array2::zeros(v.dim());
        let mut sig = Array2::zeros(v.dim());
        Zip::from(&mut sp)
            .and(&mut sig)
            .and(&*v)
            .for_each(|sp, sig, &x| {
                let (a, b) = softplus_scalar(x);
                *sp = a;
                *sig = b;
            });
        check_finite(&sp, "softplus")?;
        let sig = Rc::new(sig);
        let out = self.tape.push(sp, Op::Softplus(self.id, Rc::clone(&sig)));
        let rg = self.requires_grad();
        let slope = self.tape.push_rc(sig, Op::Sigmoid(self.id), rg);
        Ok((out, slope))
    }

    unary!(sigmoid, "sigmoid", Sigmoid, sigmoid_scalar);
    unary!(tanh, "tanh", Tanh, f64::tanh);
    unary!(exp, "exp", Exp, f64::exp);
    unary!(square, "square", Square, |x| x * x);
    unary!(abs, "abs", Abs, f64::abs);

    pub fn log(self) -> Result<Var<'t>> {
        let v = self.value();
        if v.iter().any(|&x| x <= 0.0) {
            return Err(AutodiffError::Domain("log"));
        }
        let out = v.mapv(f64::ln);
        Ok(self.tape.push(out, Op::Log(self.id)))
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        let v = self.value();
        if v.iter().any(|&x| x < 0.0) {
            return Err(AutodiffError::Domain("sqrt"));
        }
        let out = v.mapv(f64::sqrt);
        Ok(self.tape.push(out, Op::Sqrt(self.id)))
    }

    /// Clamps into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        let out = self.value().mapv(|x| x.clamp(lo, hi));
        Ok(self.tape.push(out, Op::Clamp(self.id, lo, hi)))
    }

    fn require_cols3(&self, op: &'static str, other: Option<&Var<'t>>) -> Result<()> {
        let a = self.shape();
        let ok = a.1 == 3 && other.is_none_or(|o| o.shape() == a);
        if ok {
            Ok(())
        } else {
            Err(AutodiffError::ShapeMismatch {
                op,
                lhs: a,
                rhs: other.map_or((a.0, 3), |o| o.shape()),
            })
        }
    }

    /// Row-wise cross product of two `n x 3` arrays.
    pub fn cross(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        self.require_cols3("cross", Some(&other))?;
        let out = cross_rows(&self.value(), &other.value());
        check_finite(&out, "cross")?;
        Ok(self.tape.push(out, Op::Cross(self.id, other.id)))
    }

    /// Row-wise dot product, `n x m` with `n x m` to `n x 1`.
    pub fn row_dot(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.dim() != b.dim() {
            return Err(AutodiffError::ShapeMismatch {
                op: "row_dot",
                lhs: a.dim(),
                rhs: b.dim(),
            });
        }
        let out = (&*a * &*b).sum_axis(Axis(1)).insert_axis(Axis(1));
        check_finite(&out, "row_dot")?;
        Ok(self.tape.push(out, Op::RowDot(self.id, other.id)))
    }

    /// Row-wise Euclidean norm, `n x m` to `n x 1`.
    pub fn row_norm(self) -> Result<Var<'t>> {
        let a = self.value();
        let out = a
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        check_finite(&out, "row_norm")?;
        Ok(self.tape.push(out, Op::RowNorm(self.id)))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let out = Array2::from_elem((1, 1), self.value().sum());
        check_finite(&out, "sum")?;
        Ok(self.tape.push(out, Op::Sum(self.id)))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let v = self.value();
        if v.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mean",
                lhs: v.dim(),
                rhs: (1, 1),
            });
        }
        let out = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        Ok(self.tape.push(out, Op::Mean(self.id)))
    }

    /// Sum over rows, `n x m` to `1 x m`.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        let out = self.value().sum_axis(Axis(0)).insert_axis(Axis(0));
        check_finite(&out, "sum_rows")?;
        Ok(self.tape.push(out, Op::SumRows(self.id)))
    }

    /// Sum over columns, `n x m` to `n x 1`.
    pub fn sum_cols(self) -> Result<Var<'t>> {
        let out = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        check_finite(&out, "sum_cols")?;
        Ok(self.tape.push(out, Op::SumCols(self.id)))
    }

    fn arg_reduce_rows(&self, better: impl Fn(f64, f64) -> bool) -> Result<(Mat, Vec<usize>)> {
        let v = self.value();
        if v.nrows() == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "reduce_rows",
                lhs: v.dim(),
                rhs: (1, v.ncols()),
            });
        }
        let mut out = Array2::zeros((1, v.ncols()));
        let mut arg = Vec::with_capacity(v.ncols());
        for (j, col) in v.columns().into_iter().enumerate() {
            let mut best = 0;
            for (i, &x) in col.iter().enumerate() {
                if better(x, col[best]) {
                    best = i;
                }
            }
            out[[0, j]] = col[best];
            arg.push(best);
        }
        Ok((out, arg))
    }

    /// Column-wise maximum over rows, `n x m` to `1 x m`. Ties resolve to
    /// the first row.
    pub fn max_rows(self) -> Result<Var<'t>> {
        let (out, arg) = self.arg_reduce_rows(|x, best| x > best)?;
        Ok(self.tape.push(out, Op::MaxRows(self.id, arg)))
    }

    pub fn min_rows(self) -> Result<Var<'t>> {
        let (out, arg) = self.arg_reduce_rows(|x, best| x < best)?;
        Ok(self.tape.push(out, Op::MinRows(self.id, arg)))
    }

    /// Row-wise maximum over columns, `n x m` to `n x 1`.
    pub fn max_cols(self) -> Result<Var<'t>> {
        let v = self.value();
        if v.ncols() == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "max_cols",
                lhs: v.dim(),
                rhs: (v.nrows(), 1),
            });
        }
        let mut out = Array2::zeros((v.nrows(), 1));
        let mut arg = Vec::with_capacity(v.nrows());
        for (i, row) in v.rows().into_iter().enumerate() {
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            out[[i, 0]] = row[best];
            arg.push(best);
        }
        Ok(self.tape.push(out, Op::MaxCols(self.id, arg)))
    }
}
