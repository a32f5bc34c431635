//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends a node holding its output value and enough
//! bookkeeping to push a cotangent back to its inputs. `Tape::backward`
//! walks the nodes once in reverse order.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use super::conv::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulScalar(usize, f64),
    MulConst(usize, Rc<Tensor>),
    Exp(usize),
    Relu(usize),
    Sigmoid(usize),
    Clamp(usize, f64, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Dot(usize, usize),
    Sum(usize),
    MeanRows(usize),
    SumRows(usize),
    DivRows(usize, usize),
    MulRowVec(usize, usize),
    Mix {
        weights: usize,
        states: usize,
        residual: bool,
    },
    Stack(Vec<usize>),
    Concat(Vec<usize>),
    Reshape(usize),
    GradScale(usize, f64),
    Conv3d {
        input: usize,
        kernel: usize,
        bias: usize,
        geom: ConvGeom,
    },
    MaxPool3d {
        input: usize,
        argmax: Vec<usize>,
    },
    Bce {
        prob: usize,
        label: f64,
        eps: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulScalar(..) => "mul_scalar",
            Op::MulConst(..) => "mul_const",
            Op::Exp(_) => "exp",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Clamp(..) => "clamp",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Dot(..) => "dot",
            Op::Sum(_) => "sum",
            Op::MeanRows(_) => "mean_over_set",
            Op::SumRows(_) => "sum_rows",
            Op::DivRows(..) => "div_rows",
            Op::MulRowVec(..) => "mul_row_vec",
            Op::Mix { .. } => "mix",
            Op::Stack(_) => "stack",
            Op::Concat(_) => "concat",
            Op::Reshape(_) => "reshape",
            Op::GradScale(..) => "grad_scale",
            Op::Conv3d { .. } => "conv3d",
            Op::MaxPool3d { .. } => "maxpool3d",
            Op::Bce { .. } => "bce",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients produced by one backward pass, indexed by variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(v.id).and_then(Option::take)
    }
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

    /// Trainable leaf: receives a gradient on backward.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push_leaf(t, true)
    }

    /// Non-trainable input.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push_leaf(t, false)
    }

    fn push_leaf(&self, t: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var<'_>> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!("{} produced a non-finite value", op.name())));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs(&op).iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Stack same-shaped values along a new leading axis.
    pub fn stack<'t>(&'t self, vars: &[Var<'t>]) -> Result<Var<'t>> {
        let first = vars
            .first()
            .ok_or_else(|| Error::Contract("stack of an empty set".into()))?;
        let inner = first.shape();
        let mut data = Vec::with_capacity(vars.len() * first.value().len());
        for v in vars {
            let t = v.value();
            if t.shape() != inner.as_slice() {
                return Err(Error::dim("stack", format!("{:?} vs {:?}", inner, t.shape())));
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![vars.len()];
        shape.extend_from_slice(&inner);
        self.push(
            Tensor::new(&shape, data)?,
            Op::Stack(vars.iter().map(|v| v.id).collect()),
        )
    }

    /// Flatten and join values end to end into one vector.
    pub fn concat<'t>(&'t self, vars: &[Var<'t>]) -> Result<Var<'t>> {
        if vars.is_empty() {
            return Err(Error::Contract("concat of an empty set".into()));
        }
        let mut data = Vec::new();
        for v in vars {
            data.extend_from_slice(v.value().data());
        }
        self.push(Tensor::from_vec(data), Op::Concat(vars.iter().map(|v| v.id).collect()))
    }

    /// Element-wise mean of a nonempty set of same-shaped values.
    pub fn mean_over_set<'t>(&'t self, vars: &[Var<'t>]) -> Result<Var<'t>> {
        self.stack(vars)?.mean_rows()
    }

    /// Back-propagate from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads)?;
        }
        // Only leaves keep their gradient.
        for (id, node) in nodes.iter().enumerate().take(loss.id + 1) {
            if !matches!(node.op, Op::Leaf) {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::MatMul(a, b)
        | Op::Dot(a, b)
        | Op::DivRows(a, b)
        | Op::MulRowVec(a, b) => vec![*a, *b],
        Op::MulScalar(a, _)
        | Op::MulConst(a, _)
        | Op::Exp(a)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Clamp(a, ..)
        | Op::Transpose(a)
        | Op::Sum(a)
        | Op::MeanRows(a)
        | Op::SumRows(a)
        | Op::Reshape(a)
        | Op::GradScale(a, _) => vec![*a],
        Op::Mix { weights, states, .. } => vec![*weights, *states],
        Op::Stack(ids) | Op::Concat(ids) => ids.clone(),
        Op::Conv3d {
            input, kernel, bias, ..
        } => vec![*input, *kernel, *bias],
        Op::MaxPool3d { input, .. } => vec![*input],
        Op::Bce { prob, .. } => vec![*prob],
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shapes checked on forward")
}

/// `[M, K] x [K, N]` on raw buffers.
fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Views a matmul operand as `(rows, cols)`; a vector is a single row.
fn as_matrix(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [m, n] => (*m, *n),
        _ => unreachable!("checked on forward"),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            accumulate(nodes, grads, *a, zip_map(g, val(*b), |x, y| x * y));
            accumulate(nodes, grads, *b, zip_map(g, val(*a), |x, y| x * y));
        }
        Op::MulScalar(a, s) => accumulate(nodes, grads, *a, g.map(|x| x * s)),
        Op::MulConst(a, c) => accumulate(nodes, grads, *a, zip_map(g, c, |x, y| x * y)),
        Op::Exp(a) => accumulate(nodes, grads, *a, zip_map(g, out, |x, y| x * y)),
        Op::Relu(a) => accumulate(
            nodes,
            grads,
            *a,
            zip_map(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 }),
        ),
        Op::Sigmoid(a) => accumulate(nodes, grads, *a, zip_map(g, out, |x, s| x * s * (1.0 - s))),
        Op::Clamp(a, lo, hi) => accumulate(
            nodes,
            grads,
            *a,
            zip_map(g, val(*a), |x, y| if y >= *lo && y <= *hi { x } else { 0.0 }),
        ),
        Op::MatMul(a, b) => {
            let (m, k) = as_matrix(val(*a).shape());
            let n = val(*b).shape()[1];
            if nodes[*a].requires_grad {
                let bt = transpose_raw(val(*b).data(), k, n);
                let ga = gemm(g.data(), &bt, m, n, k);
                accumulate(nodes, grads, *a, Tensor::new(val(*a).shape(), ga)?);
            }
            if nodes[*b].requires_grad {
                let at = transpose_raw(val(*a).data(), m, k);
                let gb = gemm(&at, g.data(), k, m, n);
                accumulate(nodes, grads, *b, Tensor::new(&[k, n], gb)?);
            }
        }
        Op::Transpose(a) => {
            let s = out.shape();
            let t = transpose_raw(g.data(), s[0], s[1]);
            accumulate(nodes, grads, *a, Tensor::new(&[s[1], s[0]], t)?);
        }
        Op::Dot(a, b) => {
            let s = g.item();
            accumulate(nodes, grads, *a, val(*b).map(|y| y * s));
            accumulate(nodes, grads, *b, val(*a).map(|y| y * s));
        }
        Op::Sum(a) => {
            let s = g.item();
            accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), s));
        }
        Op::MeanRows(a) => {
            let rows = val(*a).shape()[0];
            let scale = 1.0 / rows as f64;
            let row: Vec<f64> = g.data().iter().map(|x| x * scale).collect();
            let data = row.iter().copied().cycle().take(rows * row.len()).collect();
            accumulate(nodes, grads, *a, Tensor::new(val(*a).shape(), data)?);
        }
        Op::SumRows(a) => {
            let cols = val(*a).shape()[1];
            let data = g.data().iter().flat_map(|&x| std::iter::repeat_n(x, cols)).collect();
            accumulate(nodes, grads, *a, Tensor::new(val(*a).shape(), data)?);
        }
        Op::DivRows(a, c) => {
            let x = val(*a);
            let cv = val(*c).data();
            let cols = x.shape()[1];
            let mut ga = vec![0.0; x.len()];
            let mut gc = vec![0.0; cv.len()];
            for (i, &ci) in cv.iter().enumerate() {
                let row = i * cols..(i + 1) * cols;
                let mut s = 0.0;
                for ((o, gv), xv) in ga[row.clone()]
                    .iter_mut()
                    .zip(&g.data()[row.clone()])
                    .zip(&x.data()[row])
                {
                    *o = gv / ci;
                    s += gv * xv;
                }
                gc[i] = -s / (ci * ci);
            }
            accumulate(nodes, grads, *a, Tensor::new(x.shape(), ga)?);
            accumulate(nodes, grads, *c, Tensor::new(val(*c).shape(), gc)?);
        }
        Op::MulRowVec(a, v) => {
            let x = val(*a);
            let vv = val(*v).data();
            let cols = vv.len();
            let mut ga = vec![0.0; x.len()];
            let mut gv = vec![0.0; cols];
            for (r, (grow, xrow)) in g.data().chunks_exact(cols).zip(x.data().chunks_exact(cols)).enumerate() {
                for k in 0..cols {
                    ga[r * cols + k] = grow[k] * vv[k];
                    gv[k] += grow[k] * xrow[k];
                }
            }
            accumulate(nodes, grads, *a, Tensor::new(x.shape(), ga)?);
            accumulate(nodes, grads, *v, Tensor::new(val(*v).shape(), gv)?);
        }
        Op::Mix {
            weights,
            states,
            residual,
        } => {
            let (w, x) = (val(*weights), val(*states));
            let (m, d) = (x.shape()[0], x.shape()[1]);
            let (wd, xd, gd) = (w.data(), x.data(), g.data());
            let mut gw = vec![0.0; m * m];
            let mut gx = vec![0.0; m * d];
            for i in 0..m {
                let gi = &gd[i * d..(i + 1) * d];
                let xi = &xd[i * d..(i + 1) * d];
                let mut row_sum = 0.0;
                for j in 0..m {
                    let wij = wd[i * m + j];
                    row_sum += wij;
                    let xj = &xd[j * d..(j + 1) * d];
                    gw[i * m + j] = if *residual {
                        gi.iter().zip(xj).zip(xi).map(|((g, a), b)| g * (a - b)).sum()
                    } else {
                        gi.iter().zip(xj).map(|(g, a)| g * a).sum()
                    };
                    for (o, g) in gx[j * d..(j + 1) * d].iter_mut().zip(gi) {
                        *o += wij * g;
                    }
                }
                if *residual {
                    for (o, g) in gx[i * d..(i + 1) * d].iter_mut().zip(gi) {
                        *o -= row_sum * g;
                    }
                }
            }
            accumulate(nodes, grads, *weights, Tensor::new(w.shape(), gw)?);
            accumulate(nodes, grads, *states, Tensor::new(x.shape(), gx)?);
        }
        Op::Stack(ids) | Op::Concat(ids) => {
            let mut offset = 0;
            for &i in ids {
                let n = val(i).len();
                let part = g.data()[offset..offset + n].to_vec();
                offset += n;
                accumulate(nodes, grads, i, Tensor::new(val(i).shape(), part)?);
            }
        }
        Op::Reshape(a) => {
            accumulate(nodes, grads, *a, g.clone().reshaped(val(*a).shape())?);
        }
        Op::GradScale(a, s) => accumulate(nodes, grads, *a, g.map(|x| x * s)),
        Op::Conv3d {
            input,
            kernel,
            bias,
            geom,
        } => {
            let (dx, dk, db) = conv::conv3d_backward(
                geom,
                val(*input).data(),
                val(*kernel).data(),
                g.data(),
                nodes[*input].requires_grad,
            );
            if let Some(dx) = dx {
                accumulate(nodes, grads, *input, Tensor::new(val(*input).shape(), dx)?);
            }
            accumulate(nodes, grads, *kernel, Tensor::new(val(*kernel).shape(), dk)?);
            accumulate(nodes, grads, *bias, Tensor::new(val(*bias).shape(), db)?);
        }
        Op::MaxPool3d { input, argmax } => {
            let mut dx = vec![0.0; val(*input).len()];
            for (&src, gv) in argmax.iter().zip(g.data()) {
                dx[src] += gv;
            }
            accumulate(nodes, grads, *input, Tensor::new(val(*input).shape(), dx)?);
        }
        Op::Bce { prob, label, eps } => {
            let p = val(*prob).item();
            let mut d = 0.0;
            if p >= *eps {
                d -= label / p;
            }
            if 1.0 - p >= *eps {
                d += (1.0 - label) / (1.0 - p);
            }
            accumulate(nodes, grads, *prob, Tensor::scalar(d * g.item()));
        }
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    /// Borrow the value without cloning the `Rc`.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes: Ref<'_, Vec<Node>> = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    fn same_shape(&self, other: &Var<'t>, op: &'static str) -> Result<(Rc<Tensor>, Rc<Tensor>)> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        Ok((a, b))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, "add")?;
        self.tape
            .push(zip_map(&a, &b, |x, y| x + y), Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, "sub")?;
        self.tape
            .push(zip_map(&a, &b, |x, y| x - y), Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, "mul")?;
        self.tape
            .push(zip_map(&a, &b, |x, y| x * y), Op::Mul(self.id, other.id))
    }

    pub fn mul_scalar(&self, s: f64) -> Result<Var<'t>> {
        let v = self.value().map(|x| x * s);
        self.tape.push(v, Op::MulScalar(self.id, s))
    }

    /// Element-wise product with a fixed, non-differentiated tensor.
    pub fn mul_const(&self, c: Rc<Tensor>) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape() != c.shape() {
            return Err(Error::dim("mul_const", format!("{:?} vs {:?}", a.shape(), c.shape())));
        }
        self.tape.push(zip_map(&a, &c, |x, y| x * y), Op::MulConst(self.id, c))
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.tape.push(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.tape.push(self.value().map(|x| x.max(0.0)), Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.tape.push(self.value().map(sigmoid), Op::Sigmoid(self.id))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.tape
            .push(self.value().map(|x| x.clamp(lo, hi)), Op::Clamp(self.id, lo, hi))
    }

    /// `[M, K] x [K, N] -> [M, N]`, or `[K] x [K, N] -> [N]`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let mismatch = || Error::dim("matmul", format!("{:?} x {:?}", a.shape(), b.shape()));
        if !(1..=2).contains(&a.rank()) || b.rank() != 2 {
            return Err(mismatch());
        }
        let (m, k) = as_matrix(a.shape());
        if b.shape()[0] != k {
            return Err(mismatch());
        }
        let n = b.shape()[1];
        let data = gemm(a.data(), b.data(), m, k, n);
        let shape = if a.rank() == 1 { vec![n] } else { vec![m, n] };
        self.tape
            .push(Tensor::new(&shape, data)?, Op::MatMul(self.id, other.id))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let a = self.value();
        let [r, c] = a.shape() else {
            return Err(Error::dim("transpose", format!("needs a matrix, got {:?}", a.shape())));
        };
        let t = transpose_raw(a.data(), *r, *c);
        self.tape.push(Tensor::new(&[*c, *r], t)?, Op::Transpose(self.id))
    }

    pub fn dot(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, "dot")?;
        let s = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        self.tape.push(Tensor::scalar(s), Op::Dot(self.id, other.id))
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let s = self.value().data().iter().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Mean along the leading axis: `[M, ...] -> [...]`.
    pub fn mean_rows(&self) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() < 2 {
            return Err(Error::dim(
                "mean_over_set",
                format!("needs rank >= 2, got {:?}", a.shape()),
            ));
        }
        let rows = a.shape()[0];
        let inner = &a.shape()[1..];
        let width = a.len() / rows;
        let mut column = Vec::with_capacity(rows);
        let acc = (0..width)
            .map(|c| {
                // offsets from the column minimum: identical rows give back
                // that row exactly
                let anchor = (0..rows)
                    .map(|r| a.data()[r * width + c])
                    .min_by(f64::total_cmp)
                    .unwrap_or(0.0);
                column.clear();
                column.extend((0..rows).map(|r| a.data()[r * width + c] - anchor));
                anchor + order_free_sum(&mut column) / rows as f64
            })
            .collect();
        self.tape.push(Tensor::new(inner, acc)?, Op::MeanRows(self.id))
    }

    /// Row sums of a matrix: `[M, N] -> [M]`.
    pub fn sum_rows(&self) -> Result<Var<'t>> {
        let a = self.value();
        let [_, n] = a.shape() else {
            return Err(Error::dim("sum_rows", format!("needs a matrix, got {:?}", a.shape())));
        };
        let data = a
            .data()
            .chunks_exact(*n)
            .map(|r| order_free_sum(&mut r.to_vec()))
            .collect();
        self.tape.push(Tensor::from_vec(data), Op::SumRows(self.id))
    }

    /// Weighted neighbor sum over the rows of `self` (`[M, d]`):
    /// `out_i = Σ_j w_ij (x_j − x_i)` when `residual`, else `Σ_j w_ij x_j`.
    pub fn mix(&self, weights: &Var<'t>, residual: bool) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weights.value());
        let (m, d) = match (x.shape(), w.shape()) {
            ([m, d], [wm, wn]) if wm == m && wn == m => (*m, *d),
            _ => {
                return Err(Error::dim(
                    "mix",
                    format!("{:?} with weights {:?}", x.shape(), w.shape()),
                ))
            }
        };
        let (xd, wd) = (x.data(), w.data());
        let mut data = vec![0.0; m * d];
        let mut terms = Vec::with_capacity(m);
        for i in 0..m {
            for c in 0..d {
                terms.clear();
                terms.extend((0..m).map(|j| {
                    let v = if residual {
                        xd[j * d + c] - xd[i * d + c]
                    } else {
                        xd[j * d + c]
                    };
                    wd[i * m + j] * v
                }));
                data[i * d + c] = order_free_sum(&mut terms);
            }
        }
        self.tape.push(
            Tensor::new(&[m, d], data)?,
            Op::Mix {
                weights: weights.id,
                states: self.id,
                residual,
            },
        )
    }

    /// Divide row `i` of `[M, N]` by `denom[i]`.
    pub fn div_rows(&self, denom: &Var<'t>) -> Result<Var<'t>> {
        let (a, c) = (self.value(), denom.value());
        match (a.shape(), c.shape()) {
            ([m, _], [mc]) if m == mc => {}
            _ => {
                return Err(Error::dim("div_rows", format!("{:?} / {:?}", a.shape(), c.shape())));
            }
        }
        if c.data().contains(&0.0) {
            return Err(Error::Numeric("div_rows by zero".into()));
        }
        let n = a.shape()[1];
        let data = a
            .data()
            .chunks_exact(n)
            .zip(c.data())
            .flat_map(|(row, d)| row.iter().map(move |x| x / d))
            .collect();
        self.tape
            .push(Tensor::new(a.shape(), data)?, Op::DivRows(self.id, denom.id))
    }

    /// Scale every row of `[M, N]` element-wise by the vector `[N]`.
    pub fn mul_row_vec(&self, v: &Var<'t>) -> Result<Var<'t>> {
        let (a, s) = (self.value(), v.value());
        match (a.shape(), s.shape()) {
            ([_, n], [ns]) if n == ns => {}
            _ => {
                return Err(Error::dim("mul_row_vec", format!("{:?} * {:?}", a.shape(), s.shape())));
            }
        }
        let n = s.len();
        let data = a
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(s.data()).map(|(x, y)| x * y))
            .collect();
        self.tape
            .push(Tensor::new(a.shape(), data)?, Op::MulRowVec(self.id, v.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let t = (*self.value()).clone().reshaped(shape)?;
        self.tape.push(t, Op::Reshape(self.id))
    }

    /// Identity on the forward pass; multiplies the incoming gradient by `s`.
    pub fn grad_scale(&self, s: f64) -> Result<Var<'t>> {
        let t = (*self.value()).clone();
        self.tape.push(t, Op::GradScale(self.id, s))
    }

    /// Stride-1 3D convolution of `[H, W, T, Cin]` with `[kh, kw, kt, Cin, Cout]`
    /// kernels, zero-padded by `spatial_pad` on H/W and `temporal_pad` on T.
    pub fn conv3d(&self, kernel: &Var<'t>, bias: &Var<'t>, spatial_pad: usize, temporal_pad: usize) -> Result<Var<'t>> {
        let (x, k, b) = (self.value(), kernel.value(), bias.value());
        let mismatch = || {
            Error::dim(
                "conv3d",
                format!(
                    "input {:?}, kernels {:?}, bias {:?}, pads ({spatial_pad}, {temporal_pad})",
                    x.shape(),
                    k.shape(),
                    b.shape()
                ),
            )
        };
        let (Ok(xs), Ok(ks)) = (<[usize; 4]>::try_from(x.shape()), <[usize; 5]>::try_from(k.shape())) else {
            return Err(mismatch());
        };
        let fits =
            ks[0] <= xs[0] + 2 * spatial_pad && ks[1] <= xs[1] + 2 * spatial_pad && ks[2] <= xs[2] + 2 * temporal_pad;
        if ks[3] != xs[3] || b.shape() != [ks[4]] || !fits {
            return Err(mismatch());
        }
        let geom = ConvGeom {
            input: xs,
            kernel: ks,
            spatial_pad,
            temporal_pad,
        };
        let out = conv::conv3d_forward(&geom, x.data(), k.data(), b.data());
        self.tape.push(
            Tensor::new(&geom.output(), out)?,
            Op::Conv3d {
                input: self.id,
                kernel: kernel.id,
                bias: bias.id,
                geom,
            },
        )
    }

    /// Max pooling of `[H, W, T, C]` with stride equal to the window.
    pub fn maxpool3d(&self, window: [usize; 3]) -> Result<Var<'t>> {
        let x = self.value();
        let Ok(xs) = <[usize; 4]>::try_from(x.shape()) else {
            return Err(Error::dim("maxpool3d", format!("needs rank 4, got {:?}", x.shape())));
        };
        if window.contains(&0) || (0..3).any(|i| xs[i] % window[i] != 0) {
            return Err(Error::dim(
                "maxpool3d",
                format!("extents {:?} not divisible by window {:?}", x.shape(), window),
            ));
        }
        let (out, argmax) = conv::maxpool3d_forward(xs, window, x.data());
        let shape = [xs[0] / window[0], xs[1] / window[1], xs[2] / window[2], xs[3]];
        self.tape
            .push(Tensor::new(&shape, out)?, Op::MaxPool3d { input: self.id, argmax })
    }

    /// Binary cross-entropy of a probability against a 0/1 label; each log
    /// argument is floored at `eps`.
    pub fn bce(&self, label: f64, eps: f64) -> Result<Var<'t>> {
        let p = self.value();
        if p.len() != 1 {
            return Err(Error::dim("bce", format!("needs a scalar, got {:?}", p.shape())));
        }
        let loss = bce_terms(p.item(), label, eps);
        self.tape.push(
            Tensor::scalar(loss),
            Op::Bce {
                prob: self.id,
                label,
                eps,
            },
        )
    }
}

pub fn bce_terms(p: f64, label: f64, eps: f64) -> f64 {
    let mut loss = 0.0;
    if label != 0.0 {
        loss -= label * p.max(eps).ln();
    }
    if label != 1.0 {
        loss -= (1.0 - label) * (1.0 - p).max(eps).ln();
    }
    loss
}

/// Sum that does not depend on the order of `values` (sorted first).
pub fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
