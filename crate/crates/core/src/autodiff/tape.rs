use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::autodiff::tensor::{matmul_nt, matmul_tn};
use crate::autodiff::{Tensor, TensorError};
use crate::linalg::{self, Triangle};
use crate::scalar::{self, Scalar};

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(T),
    AddScalar,
    MatMul,
    Transpose,
    Sum,
    SumAxis(usize),
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
    Sqrt,
    Softmax,
    LayerNorm { rstd: Vec<T> },
    Slice { axis: usize, start: usize },
    Concat { axis: usize, sizes: Vec<usize> },
    Broadcast,
    Reshape,
    PairwiseSqDist,
    Cholesky,
    TriSolve { triangle: Triangle, transpose: bool },
    LogDetChol,
    Diag,
    DiagEmbed,
    Heaviside,
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Sum => "sum",
            Op::SumAxis(_) => "sum_axis",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::Relu => "relu",
            Op::Sqrt => "sqrt",
            Op::Softmax => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Broadcast => "broadcast",
            Op::Reshape => "reshape",
            Op::PairwiseSqDist => "pairwise_sq_dist",
            Op::Cholesky => "cholesky",
            Op::TriSolve { .. } => "triangular_solve",
            Op::LogDetChol => "logdet_from_cholesky",
            Op::Diag => "diag",
            Op::DiagEmbed => "diag_embed",
            Op::Heaviside => "heaviside",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<usize>,
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    param: Option<String>,
}

/// Define-by-run recording of tensor operations.
///
/// Nodes are appended in evaluation order, so append order is a valid
/// topological order for the reverse sweep.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a recorded tensor.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of a scalar loss with respect to trainable leaves.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    by_name: BTreeMap<String, Tensor<T>>,
    by_id: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradients keyed by name only.
    pub fn from_map(by_name: BTreeMap<String, Tensor<T>>) -> Self {
        Self {
            by_name,
            by_id: HashMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_id.get(&var.id)
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.by_name.iter()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor<T>> {
        self.by_name
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Offsets into a source of shape `from` for every element of `to` under
/// broadcasting (size-1 and missing leading axes repeat).
fn broadcast_index(from: &[usize], to: &[usize]) -> Vec<usize> {
    let rank = to.len();
    let pad = rank - from.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..from.len()).rev() {
        strides[i + pad] = if from[i] == 1 { 0 } else { s };
        s *= from[i];
    }
    let total: usize = to.iter().product();
    let mut idx = vec![0usize; rank];
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        out.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < to[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn lower_mask<T: Scalar>(t: &mut Tensor<T>, triangle: Triangle) {
    let n = t.rows();
    for i in 0..n {
        for j in 0..n {
            let keep = match triangle {
                Triangle::Lower => j <= i,
                Triangle::Upper => j >= i,
            };
            if !keep {
                t.set(i, j, T::zero());
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf. Gradients are reported under `name`; registering the
    /// same name twice accumulates into one entry.
    pub fn param(&self, name: impl Into<String>, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, Some(name.into()))
    }

    /// Leaf that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, None)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    fn push_leaf(&self, value: Tensor<T>, param: Option<String>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            value: Arc::new(value),
            requires_grad: param.is_some(),
            param,
        });
        Var { tape: self, id }
    }

    fn push(&self, op: Op<T>, inputs: Vec<usize>, value: Tensor<T>) -> Result<Var<'_, T>, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        let id = nodes.len();
        nodes.push(Node {
            op,
            inputs,
            value: Arc::new(value),
            requires_grad,
            param: None,
        });
        Ok(Var { tape: self, id })
    }

    fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>, TensorError> {
        let first = parts
            .first()
            .ok_or(TensorError::Empty { op: "concat" })?
            .value();
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::BadAxis { op: "concat", axis, rank });
        }
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut shape = first.shape().to_vec();
        let mut sizes = Vec::with_capacity(parts.len());
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == rank
                && s.iter().enumerate().all(|(d, &n)| d == axis || n == first.shape()[d]);
            if !compatible {
                return Err(TensorError::shape("concat", first.shape(), s));
            }
            sizes.push(s[axis]);
        }
        shape[axis] = sizes.iter().sum();
        let (outer, _, inner) = outer_inner(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for (v, &sz) in values.iter().zip(&sizes) {
                let block = sz * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let ids = parts.iter().map(|p| p.id).collect();
        self.push(Op::Concat { axis, sizes }, ids, Tensor::from_parts(shape, data))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>, TensorError> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: root.value.shape().to_vec(),
            });
        }
        let mut out = Gradients::default();
        if !root.requires_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one()));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if let Some(name) = &node.param {
                    match out.by_name.get_mut(name) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            out.by_name.insert(name.clone(), g.clone());
                        }
                    }
                    out.by_id.insert(id, g);
                }
                continue;
            }
            let input_grads = local_backward(&nodes, node, &g)?;
            for (&inp, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !nodes[inp].requires_grad {
                    continue;
                }
                match &mut grads[inp] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(out)
    }
}

/// Gradient contributions of `node` to each of its inputs.
fn local_backward<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
) -> Result<Vec<Option<Tensor<T>>>, TensorError> {
    let inp = |k: usize| -> &Tensor<T> { &nodes[node.inputs[k]].value };
    let needs = |k: usize| nodes[node.inputs[k]].requires_grad;
    let y = &*node.value;
    let one = T::one();
    let two = T::of(2.0);
    let grads = match &node.op {
        Op::Leaf => vec![],
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
        Op::Mul => vec![
            needs(0).then(|| g.zip_map(inp(1), |a, b| a * b)),
            needs(1).then(|| g.zip_map(inp(0), |a, b| a * b)),
        ],
        Op::Div => {
            let (a, b) = (inp(0), inp(1));
            vec![
                needs(0).then(|| g.zip_map(b, |gv, bv| gv / bv)),
                needs(1).then(|| {
                    let t = g.zip_map(a, |gv, av| gv * av);
                    t.zip_map(b, |v, bv| -v / (bv * bv))
                }),
            ]
        }
        Op::Neg => vec![Some(g.map(|v| -v))],
        Op::Scale(c) => {
            let c = *c;
            vec![Some(g.map(|v| v * c))]
        }
        Op::AddScalar => vec![Some(g.clone())],
        Op::MatMul => vec![
            needs(0).then(|| matmul_nt(g, inp(1))),
            needs(1).then(|| matmul_tn(inp(0), g)),
        ],
        Op::Transpose => vec![Some(g.transpose())],
        Op::Sum => {
            let gv = g.item();
            vec![Some(Tensor::full(inp(0).shape(), gv))]
        }
        Op::SumAxis(axis) => {
            let shape = inp(0).shape();
            let (outer, len, inner) = outer_inner(shape, *axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                for _ in 0..len {
                    data.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Tensor::from_parts(shape.to_vec(), data))]
        }
        Op::Exp => vec![Some(g.zip_map(y, |a, b| a * b))],
        Op::Log => vec![Some(g.zip_map(inp(0), |a, x| a / x))],
        Op::Tanh => vec![Some(g.zip_map(y, |a, t| a * (one - t * t)))],
        Op::Sigmoid => vec![Some(g.zip_map(y, |a, s| a * s * (one - s)))],
        Op::Softplus => vec![Some(g.zip_map(inp(0), |a, x| a * scalar::sigmoid(x)))],
        Op::Relu => vec![Some(g.zip_map(inp(0), |a, x| if x > T::zero() { a } else { T::zero() }))],
        Op::Sqrt => vec![Some(g.zip_map(y, |a, s| a / (two * s)))],
        Op::Softmax => {
            let n = *y.shape().last().unwrap();
            let mut out = vec![T::zero(); y.len()];
            for (r, (yr, gr)) in y.data().chunks(n).zip(g.data().chunks(n)).enumerate() {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..n {
                    out[r * n + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), out))]
        }
        Op::LayerNorm { rstd } => {
            let n = *y.shape().last().unwrap();
            let nf = T::of(n as f64);
            let mut out = vec![T::zero(); y.len()];
            for (r, (yr, gr)) in y.data().chunks(n).zip(g.data().chunks(n)).enumerate() {
                let gm: T = gr.iter().copied().sum::<T>() / nf;
                let gy: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / nf;
                for j in 0..n {
                    out[r * n + j] = rstd[r] * (gr[j] - gm - yr[j] * gy);
                }
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), out))]
        }
        Op::Slice { axis, start } => {
            let shape = inp(0).shape();
            let (outer, len, inner) = outer_inner(shape, *axis);
            let width = g.shape()[*axis];
            let mut data = vec![T::zero(); inp(0).len()];
            for o in 0..outer {
                let dst = o * len * inner + start * inner;
                let src = o * width * inner;
                data[dst..dst + width * inner].copy_from_slice(&g.data()[src..src + width * inner]);
            }
            vec![Some(Tensor::from_parts(shape.to_vec(), data))]
        }
        Op::Concat { axis, sizes } => {
            let (outer, total, inner) = outer_inner(g.shape(), *axis);
            let mut offset = 0;
            let mut out = Vec::with_capacity(sizes.len());
            for (k, &sz) in sizes.iter().enumerate() {
                if !needs(k) {
                    out.push(None);
                    offset += sz;
                    continue;
                }
                let mut data = Vec::with_capacity(outer * sz * inner);
                for o in 0..outer {
                    let s = o * total * inner + offset * inner;
                    data.extend_from_slice(&g.data()[s..s + sz * inner]);
                }
                out.push(Some(Tensor::from_parts(inp(k).shape().to_vec(), data)));
                offset += sz;
            }
            out
        }
        Op::Broadcast => {
            let from = inp(0).shape();
            let idx = broadcast_index(from, g.shape());
            let mut data = vec![T::zero(); inp(0).len()];
            for (&i, &v) in idx.iter().zip(g.data()) {
                data[i] = data[i] + v;
            }
            vec![Some(Tensor::from_parts(from.to_vec(), data))]
        }
        Op::Reshape => vec![Some(Tensor::from_parts(inp(0).shape().to_vec(), g.data().to_vec()))],
        Op::PairwiseSqDist => {
            let (a, b) = (inp(0), inp(1));
            let (n, m, p) = (a.rows(), a.cols(), b.rows());
            let mut ga = vec![T::zero(); n * m];
            let mut gb = vec![T::zero(); p * m];
            for i in 0..n {
                for j in 0..p {
                    let w = two * g.get(i, j);
                    if w == T::zero() {
                        continue;
                    }
                    for k in 0..m {
                        let d = w * (a.get(i, k) - b.get(j, k));
                        ga[i * m + k] = ga[i * m + k] + d;
                        gb[j * m + k] = gb[j * m + k] - d;
                    }
                }
            }
            vec![
                needs(0).then(|| Tensor::from_parts(vec![n, m], ga)),
                needs(1).then(|| Tensor::from_parts(vec![p, m], gb)),
            ]
        }
        Op::Cholesky => {
            // dA = dL Lᵀ + L dLᵀ gives Ā = L⁻ᵀ Φ(Lᵀ L̄) L⁻¹, then symmetrized.
            let l = y;
            let mut lbar = g.clone();
            lower_mask(&mut lbar, Triangle::Lower);
            let mut p = matmul_tn(l, &lbar);
            let n = p.rows();
            for i in 0..n {
                for j in 0..n {
                    if j > i {
                        p.set(i, j, T::zero());
                    } else if i == j {
                        let v = p.get(i, i) * T::of(0.5);
                        p.set(i, i, v);
                    }
                }
            }
            // S = L⁻ᵀ P L⁻¹ = L⁻ᵀ (L⁻ᵀ Pᵀ)ᵀ
            let x = linalg::solve_triangular(l, &p.transpose(), Triangle::Lower, true)?;
            let s = linalg::solve_triangular(l, &x.transpose(), Triangle::Lower, true)?;
            let sym = s.zip_map(&s.transpose(), |a, b| (a + b) * T::of(0.5));
            vec![Some(sym)]
        }
        Op::TriSolve { triangle, transpose } => {
            let a = inp(0);
            let bbar = linalg::solve_triangular(a, g, *triangle, !*transpose)?;
            let ga = if needs(0) {
                let as_mat = |t: &Tensor<T>| {
                    if t.rank() == 1 {
                        Tensor::from_parts(vec![t.len(), 1], t.data().to_vec())
                    } else {
                        t.clone()
                    }
                };
                let op_bar = matmul_nt(&as_mat(&bbar), &as_mat(y)).map(|v| -v);
                let mut abar = if *transpose { op_bar.transpose() } else { op_bar };
                lower_mask(&mut abar, *triangle);
                Some(abar)
            } else {
                None
            };
            vec![ga, needs(1).then_some(bbar)]
        }
        Op::LogDetChol => {
            let l = inp(0);
            let n = l.rows();
            let gv = g.item();
            let mut out = Tensor::zeros(&[n, n]);
            for i in 0..n {
                out.set(i, i, two * gv / l.get(i, i));
            }
            vec![Some(out)]
        }
        Op::Diag => {
            let n = g.len();
            let mut out = Tensor::zeros(&[n, n]);
            for i in 0..n {
                out.set(i, i, g.data()[i]);
            }
            vec![Some(out)]
        }
        Op::DiagEmbed => {
            let n = g.rows();
            vec![Some(Tensor::vector((0..n).map(|i| g.get(i, i)).collect()))]
        }
        Op::Heaviside => return Err(TensorError::NoBackwardRule { op: "heaviside" }),
    };
    Ok(grads)
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        self.value().item()
    }

    fn unary(self, op: Op<T>, f: impl Fn(T) -> T) -> Result<Self, TensorError> {
        let v = self.value().map(f);
        self.tape.push(op, vec![self.id], v)
    }

    fn binary(self, other: Self, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Self, TensorError> {
        let (sa, sb) = (self.shape(), other.shape());
        let (a, b) = if sa == sb {
            (self, other)
        } else {
            let target = broadcast_shape(&sa, &sb)
                .ok_or_else(|| TensorError::shape(op.name(), &sa, &sb))?;
            (self.broadcast_to(&target)?, other.broadcast_to(&target)?)
        };
        let v = a.value().zip_map(&b.value(), f);
        self.tape.push(op, vec![a.id, b.id], v)
    }

    /// Elementwise sum with broadcasting.
    pub fn add(self, other: Self) -> Result<Self, TensorError> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Self) -> Result<Self, TensorError> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Self) -> Result<Self, TensorError> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Self) -> Result<Self, TensorError> {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    pub fn neg(self) -> Result<Self, TensorError> {
        self.unary(Op::Neg, |v| -v)
    }

    pub fn scale(self, c: T) -> Result<Self, TensorError> {
        self.unary(Op::Scale(c), |v| v * c)
    }

    pub fn add_scalar(self, c: T) -> Result<Self, TensorError> {
        self.unary(Op::AddScalar, |v| v + c)
    }

    pub fn square(self) -> Result<Self, TensorError> {
        self.mul(self)
    }

    pub fn matmul(self, other: Self) -> Result<Self, TensorError> {
        let (a, b) = (self.value(), other.value());
        let v = a.matmul(&b)?;
        self.tape.push(Op::MatMul, vec![self.id, other.id], v)
    }

    /// Transpose of a matrix.
    pub fn t(self) -> Result<Self, TensorError> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(TensorError::shape("transpose", a.shape(), a.shape()));
        }
        self.tape.push(Op::Transpose, vec![self.id], a.transpose())
    }

    pub fn sum(self) -> Result<Self, TensorError> {
        let s = self.value().sum();
        self.tape.push(Op::Sum, vec![self.id], Tensor::scalar(s))
    }

    pub fn mean(self) -> Result<Self, TensorError> {
        let n = self.value().len();
        self.sum()?.scale(T::one() / T::of(n as f64))
    }

    /// Sum over `axis`, keeping it with size 1.
    pub fn sum_axis(self, axis: usize) -> Result<Self, TensorError> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(TensorError::BadAxis { op: "sum_axis", axis, rank: a.rank() });
        }
        let (outer, len, inner) = outer_inner(a.shape(), axis);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &a.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = 1;
        self.tape.push(Op::SumAxis(axis), vec![self.id], Tensor::from_parts(shape, data))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Self, TensorError> {
        let shape = self.shape();
        let n = *shape
            .get(axis)
            .ok_or(TensorError::BadAxis { op: "mean_axis", axis, rank: shape.len() })?;
        self.sum_axis(axis)?.scale(T::one() / T::of(n as f64))
    }

    pub fn exp(self) -> Result<Self, TensorError> {
        self.unary(Op::Exp, T::exp)
    }

    pub fn ln(self) -> Result<Self, TensorError> {
        self.unary(Op::Log, T::ln)
    }

    pub fn tanh(self) -> Result<Self, TensorError> {
        self.unary(Op::Tanh, T::tanh)
    }

    pub fn sigmoid(self) -> Result<Self, TensorError> {
        self.unary(Op::Sigmoid, scalar::sigmoid)
    }

    pub fn softplus(self) -> Result<Self, TensorError> {
        self.unary(Op::Softplus, scalar::softplus)
    }

    pub fn relu(self) -> Result<Self, TensorError> {
        self.unary(Op::Relu, |v| v.max(T::zero()))
    }

    pub fn sqrt(self) -> Result<Self, TensorError> {
        self.unary(Op::Sqrt, T::sqrt)
    }

    /// Step function. Has no backward rule; differentiating through it is
    /// an error.
    pub fn heaviside(self) -> Result<Self, TensorError> {
        self.unary(Op::Heaviside, |v| if v > T::zero() { T::one() } else { T::zero() })
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Self, TensorError> {
        let a = self.value();
        let n = *a.shape().last().ok_or(TensorError::BadAxis { op: "softmax", axis: 0, rank: 0 })?;
        let mut out = Vec::with_capacity(a.len());
        for row in a.data().chunks(n) {
            let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let e: Vec<T> = row.iter().map(|&v| (v - mx).exp()).collect();
            let s: T = e.iter().copied().sum();
            out.extend(e.into_iter().map(|v| v / s));
        }
        self.tape.push(Op::Softmax, vec![self.id], Tensor::from_parts(a.shape().to_vec(), out))
    }

    /// Normalizes the last axis to zero mean and unit variance.
    pub fn layer_norm(self, eps: T) -> Result<Self, TensorError> {
        let a = self.value();
        let n = *a.shape().last().ok_or(TensorError::BadAxis { op: "layer_norm", axis: 0, rank: 0 })?;
        let nf = T::of(n as f64);
        let mut out = Vec::with_capacity(a.len());
        let mut rstd = Vec::with_capacity(a.len() / n.max(1));
        for row in a.data().chunks(n) {
            let mu = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            out.extend(row.iter().map(|&v| (v - mu) * r));
        }
        self.tape.push(
            Op::LayerNorm { rstd },
            vec![self.id],
            Tensor::from_parts(a.shape().to_vec(), out),
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Self, TensorError> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(TensorError::BadAxis { op: "slice", axis, rank: a.rank() });
        }
        let (outer, len, inner) = outer_inner(a.shape(), axis);
        if start >= end || end > len {
            return Err(TensorError::BadRange { start, end, len });
        }
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let s = o * len * inner + start * inner;
            data.extend_from_slice(&a.data()[s..s + width * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = width;
        self.tape
            .push(Op::Slice { axis, start }, vec![self.id], Tensor::from_parts(shape, data))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Self, TensorError> {
        let a = self.value();
        if a.shape() == shape {
            return Ok(self);
        }
        match broadcast_shape(a.shape(), shape) {
            Some(s) if s == shape => {}
            _ => return Err(TensorError::shape("broadcast", a.shape(), shape)),
        }
        let idx = broadcast_index(a.shape(), shape);
        let data = idx.iter().map(|&i| a.data()[i]).collect();
        self.tape
            .push(Op::Broadcast, vec![self.id], Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        let a = self.value();
        let v = (*a).clone().reshaped(shape.to_vec())?;
        self.tape.push(Op::Reshape, vec![self.id], v)
    }

    /// `D[i, j] = ‖aᵢ − bⱼ‖²` for rows of `self` and `other`.
    pub fn pairwise_sq_dist(self, other: Self) -> Result<Self, TensorError> {
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
            return Err(TensorError::shape("pairwise_sq_dist", a.shape(), b.shape()));
        }
        let d = pairwise_sq_dist(&a, &b);
        self.tape.push(Op::PairwiseSqDist, vec![self.id, other.id], d)
    }

    /// Lower Cholesky factor of the symmetric part of `self`.
    pub fn cholesky(self) -> Result<Self, TensorError> {
        let a = self.value();
        if a.rank() != 2 || a.rows() != a.cols() {
            return Err(TensorError::shape("cholesky", a.shape(), a.shape()));
        }
        let sym = a.zip_map(&a.transpose(), |x, y| (x + y) * T::of(0.5));
        let l = linalg::cholesky(&sym)?;
        self.tape.push(Op::Cholesky, vec![self.id], l)
    }

    /// Solves `op(self) X = rhs` with `self` triangular.
    pub fn tri_solve(self, rhs: Self, triangle: Triangle, transpose: bool) -> Result<Self, TensorError> {
        let (a, b) = (self.value(), rhs.value());
        let x = linalg::solve_triangular(&a, &b, triangle, transpose)?;
        self.tape
            .push(Op::TriSolve { triangle, transpose }, vec![self.id, rhs.id], x)
    }

    /// `log det(L Lᵀ)` from a lower Cholesky factor.
    pub fn logdet_from_cholesky(self) -> Result<Self, TensorError> {
        let l = self.value();
        if l.rank() != 2 || l.rows() != l.cols() {
            return Err(TensorError::shape("logdet_from_cholesky", l.shape(), l.shape()));
        }
        let v = linalg::logdet_from_cholesky(&l);
        self.tape.push(Op::LogDetChol, vec![self.id], Tensor::scalar(v))
    }

    /// Main diagonal of a square matrix as a vector.
    pub fn diag(self) -> Result<Self, TensorError> {
        let a = self.value();
        if a.rank() != 2 || a.rows() != a.cols() {
            return Err(TensorError::shape("diag", a.shape(), a.shape()));
        }
        let d = (0..a.rows()).map(|i| a.get(i, i)).collect();
        self.tape.push(Op::Diag, vec![self.id], Tensor::vector(d))
    }

    /// Square matrix with `self` (a vector) on the diagonal.
    pub fn diag_embed(self) -> Result<Self, TensorError> {
        let a = self.value();
        if a.rank() != 1 {
            return Err(TensorError::shape("diag_embed", a.shape(), a.shape()));
        }
        let n = a.len();
        let mut m = Tensor::zeros(&[n, n]);
        for i in 0..n {
            m.set(i, i, a.data()[i]);
        }
        self.tape.push(Op::DiagEmbed, vec![self.id], m)
    }
}

pub(crate) fn pairwise_sq_dist<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, m, p) = (a.rows(), a.cols(), b.rows());
    let mut d = Vec::with_capacity(n * p);
    for i in 0..n {
        let ai = &a.data()[i * m..(i + 1) * m];
        for j in 0..p {
            let bj = &b.data()[j * m..(j + 1) * m];
            d.push(ai.iter().zip(bj).map(|(&x, &y)| (x - y) * (x - y)).sum());
        }
    }
    Tensor::from_parts(vec![n, p], d)
}
