use std::collections::BTreeMap;

use super::kernels::{self, axis_split, Broadcast};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Supported operations. Attributes travel inside the variant.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    /// Addition where the second operand broadcasts over the leading axes of the first.
    BroadcastAdd,
    Scale(f64),
    /// Swaps the last two axes.
    Transpose,
    Reshape(Vec<usize>),
    Concat {
        axis: isize,
    },
    Slice {
        axis: isize,
        start: usize,
        end: usize,
    },
    Softmax {
        axis: isize,
    },
    LayerNorm {
        axis: isize,
        eps: f64,
    },
    Sigmoid,
    Gelu,
    /// Row gather from a `[vocab, dim]` table.
    EmbeddingLookup {
        indices: Vec<usize>,
    },
    Mean {
        axis: Option<isize>,
    },
    Sum {
        axis: Option<isize>,
    },
    MseLoss,
}

/// Attribute value for [`OpKind::from_name`].
#[derive(Clone, Debug, PartialEq)]
pub enum Attr {
    Int(i64),
    Float(f64),
    Ints(Vec<i64>),
}

pub type Attrs = BTreeMap<String, Attr>;

fn attr_int(attrs: &Attrs, key: &str, default: Option<i64>) -> Result<i64> {
    match attrs.get(key) {
        Some(Attr::Int(v)) => Ok(*v),
        Some(other) => Err(Error::invalid(format!(
            "attribute `{key}` must be an integer, got {other:?}"
        ))),
        None => default.ok_or_else(|| Error::invalid(format!("missing attribute `{key}`"))),
    }
}

fn attr_float(attrs: &Attrs, key: &str, default: Option<f64>) -> Result<f64> {
    match attrs.get(key) {
        Some(Attr::Float(v)) => Ok(*v),
        Some(Attr::Int(v)) => Ok(*v as f64),
        Some(other) => Err(Error::invalid(format!(
            "attribute `{key}` must be a number, got {other:?}"
        ))),
        None => default.ok_or_else(|| Error::invalid(format!("missing attribute `{key}`"))),
    }
}

fn attr_usizes(attrs: &Attrs, key: &str) -> Result<Vec<usize>> {
    match attrs.get(key) {
        Some(Attr::Ints(v)) => v
            .iter()
            .map(|&x| {
                usize::try_from(x).map_err(|_| Error::invalid(format!("negative entry in `{key}`")))
            })
            .collect(),
        _ => Err(Error::invalid(format!(
            "missing integer-list attribute `{key}`"
        ))),
    }
}

impl OpKind {
    /// Builds an op from its textual name plus an attribute map.
    pub fn from_name(name: &str, attrs: &Attrs) -> Result<Self> {
        let axis_opt = |attrs: &Attrs| -> Result<Option<isize>> {
            match attrs.get("axis") {
                None => Ok(None),
                Some(_) => Ok(Some(attr_int(attrs, "axis", None)? as isize)),
            }
        };
        Ok(match name {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "broadcast_add" => OpKind::BroadcastAdd,
            "scale" => OpKind::Scale(attr_float(attrs, "factor", None)?),
            "transpose" => OpKind::Transpose,
            "reshape" => OpKind::Reshape(attr_usizes(attrs, "shape")?),
            "concat" => OpKind::Concat {
                axis: attr_int(attrs, "axis", Some(0))? as isize,
            },
            "slice" => OpKind::Slice {
                axis: attr_int(attrs, "axis", Some(0))? as isize,
                start: attr_int(attrs, "start", None)? as usize,
                end: attr_int(attrs, "end", None)? as usize,
            },
            "softmax" => OpKind::Softmax {
                axis: attr_int(attrs, "axis", Some(-1))? as isize,
            },
            "layer_norm" => OpKind::LayerNorm {
                axis: attr_int(attrs, "axis", Some(-1))? as isize,
                eps: attr_float(attrs, "eps", Some(1e-5))?,
            },
            "sigmoid" => OpKind::Sigmoid,
            "gelu" => OpKind::Gelu,
            "embedding_lookup" => OpKind::EmbeddingLookup {
                indices: attr_usizes(attrs, "indices")?,
            },
            "mean" => OpKind::Mean {
                axis: axis_opt(attrs)?,
            },
            "sum" => OpKind::Sum {
                axis: axis_opt(attrs)?,
            },
            "mse_loss" => OpKind::MseLoss,
            other => return Err(Error::UnknownOp(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::BroadcastAdd => "broadcast_add",
            OpKind::Scale(_) => "scale",
            OpKind::Transpose => "transpose",
            OpKind::Reshape(_) => "reshape",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Softmax { .. } => "softmax",
            OpKind::LayerNorm { .. } => "layer_norm",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Gelu => "gelu",
            OpKind::EmbeddingLookup { .. } => "embedding_lookup",
            OpKind::Mean { .. } => "mean",
            OpKind::Sum { .. } => "sum",
            OpKind::MseLoss => "mse_loss",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Leaf => Some(0),
            OpKind::MatMul
            | OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::BroadcastAdd
            | OpKind::MseLoss => Some(2),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: OpKind,
    inputs: Vec<Var>,
    tracked: bool,
    /// Per-op saved state (layer-norm inverse std-devs).
    aux: Vec<T>,
}

/// Tape of recorded ops. Nodes are appended in evaluation order, so the
/// node list is already topologically sorted.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn norm_axis(op: &'static str, axis: isize, ndim: usize) -> Result<usize> {
    let a = if axis < 0 { axis + ndim as isize } else { axis };
    if a < 0 || a as usize >= ndim {
        return Err(Error::shape(
            op,
            format!("axis {axis} out of range for {ndim}-d input"),
        ));
    }
    Ok(a as usize)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf; it is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let tracked = t.requires_grad();
        self.push(t, OpKind::Leaf, Vec::new(), tracked, Vec::new())
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op(&self, v: Var) -> &OpKind {
        &self.nodes[v.0].op
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Clears gradients on every leaf and intermediate node.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
        self.grads.clear();
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        op: OpKind,
        inputs: Vec<Var>,
        tracked: bool,
        aux: Vec<T>,
    ) -> Var {
        let value = value.with_requires_grad(tracked);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            tracked,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    /// Applies `kind` to `inputs`, recording a node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(Error::invalid(format!(
                    "{} expects {n} inputs, got {}",
                    kind.name(),
                    inputs.len()
                )));
            }
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::invalid(format!("unknown node {}", bad.0)));
        }
        let (value, aux) = self.forward(&kind, inputs)?;
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        Ok(self.push(value, kind, inputs.to_vec(), tracked, aux))
    }

    /// String-keyed entry point mirroring [`Graph::apply`].
    pub fn apply_named(&mut self, name: &str, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        let kind = OpKind::from_name(name, attrs)?;
        self.apply(kind, inputs)
    }

    // Convenience wrappers.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn broadcast_add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::BroadcastAdd, &[a, b])
    }
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.apply(OpKind::Scale(factor), &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Transpose, &[a])
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(OpKind::Reshape(shape.to_vec()), &[a])
    }
    pub fn concat(&mut self, parts: &[Var], axis: isize) -> Result<Var> {
        self.apply(OpKind::Concat { axis }, parts)
    }
    pub fn slice(&mut self, a: Var, axis: isize, start: usize, end: usize) -> Result<Var> {
        self.apply(OpKind::Slice { axis, start, end }, &[a])
    }
    pub fn softmax(&mut self, a: Var, axis: isize) -> Result<Var> {
        self.apply(OpKind::Softmax { axis }, &[a])
    }
    pub fn layer_norm(&mut self, a: Var, axis: isize, eps: f64) -> Result<Var> {
        self.apply(OpKind::LayerNorm { axis, eps }, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Gelu, &[a])
    }
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        self.apply(
            OpKind::EmbeddingLookup {
                indices: indices.to_vec(),
            },
            &[table],
        )
    }
    pub fn mean(&mut self, a: Var, axis: Option<isize>) -> Result<Var> {
        self.apply(OpKind::Mean { axis }, &[a])
    }
    pub fn sum(&mut self, a: Var, axis: Option<isize>) -> Result<Var> {
        self.apply(OpKind::Sum { axis }, &[a])
    }
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MseLoss, &[a, b])
    }

    fn forward(&self, kind: &OpKind, inputs: &[Var]) -> Result<(Tensor<T>, Vec<T>)> {
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let out = match kind {
            OpKind::Leaf => return Err(Error::invalid("leaf nodes are created with Graph::leaf")),
            OpKind::MatMul => matmul_forward(val(0), val(1))?,
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::BroadcastAdd => {
                let (a, b) = (val(0), val(1));
                let name = kind.name();
                let plan = Broadcast::new(a.shape(), b.shape()).ok_or_else(|| {
                    Error::shape(
                        name,
                        format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()),
                    )
                })?;
                if matches!(kind, OpKind::BroadcastAdd) && plan.out_shape.as_slice() != a.shape() {
                    return Err(Error::shape(
                        name,
                        format!("{:?} does not broadcast into {:?}", b.shape(), a.shape()),
                    ));
                }
                let (ad, bd) = (a.data(), b.data());
                let mut out = vec![T::zero(); plan.numel()];
                match kind {
                    OpKind::Sub => plan.for_each(|i, ia, ib| out[i] = ad[ia] - bd[ib]),
                    OpKind::Mul => plan.for_each(|i, ia, ib| out[i] = ad[ia] * bd[ib]),
                    _ => plan.for_each(|i, ia, ib| out[i] = ad[ia] + bd[ib]),
                }
                Tensor::new(plan.out_shape, out)?
            }
            OpKind::Scale(c) => {
                let c = T::lit(*c);
                let a = val(0);
                Tensor::new(
                    a.shape().to_vec(),
                    a.data().iter().map(|&x| x * c).collect(),
                )?
            }
            OpKind::Transpose => {
                let a = val(0);
                let nd = a.ndim();
                if nd < 2 {
                    return Err(Error::shape(
                        "transpose",
                        format!("needs ≥2 dims, got {:?}", a.shape()),
                    ));
                }
                let (r, c) = (a.shape()[nd - 2], a.shape()[nd - 1]);
                let batch = a.numel() / (r * c);
                let mut shape = a.shape().to_vec();
                shape.swap(nd - 2, nd - 1);
                Tensor::new(shape, kernels::transpose_last2(a.data(), batch, r, c))?
            }
            OpKind::Reshape(shape) => {
                let a = val(0);
                let n: usize = shape.iter().product();
                if n != a.numel() {
                    return Err(Error::shape(
                        "reshape",
                        format!("cannot reshape {:?} into {shape:?}", a.shape()),
                    ));
                }
                Tensor::new(shape.clone(), a.data().to_vec())?
            }
            OpKind::Concat { axis } => {
                if inputs.is_empty() {
                    return Err(Error::invalid("concat needs at least one input"));
                }
                let first = val(0).shape().to_vec();
                let ax = norm_axis("concat", *axis, first.len())?;
                let mut total = 0;
                for i in 0..inputs.len() {
                    let s = val(i).shape();
                    let ok = s.len() == first.len()
                        && s.iter()
                            .zip(&first)
                            .enumerate()
                            .all(|(d, (x, y))| d == ax || x == y);
                    if !ok {
                        return Err(Error::shape(
                            "concat",
                            format!("input {i} has shape {s:?}, expected {first:?} off axis {ax}"),
                        ));
                    }
                    total += s[ax];
                }
                let mut shape = first.clone();
                shape[ax] = total;
                let (outer, _, inner) = axis_split(&shape, ax);
                let mut out = Vec::with_capacity(shape.iter().product());
                for o in 0..outer {
                    for i in 0..inputs.len() {
                        let t = val(i);
                        let chunk = t.shape()[ax] * inner;
                        out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                    }
                }
                Tensor::new(shape, out)?
            }
            OpKind::Slice { axis, start, end } => {
                let a = val(0);
                let ax = norm_axis("slice", *axis, a.ndim())?;
                if start >= end || *end > a.shape()[ax] {
                    return Err(Error::shape(
                        "slice",
                        format!(
                            "range {start}..{end} invalid for axis {ax} of {:?}",
                            a.shape()
                        ),
                    ));
                }
                let (outer, len, inner) = axis_split(a.shape(), ax);
                let mut shape = a.shape().to_vec();
                shape[ax] = end - start;
                let mut out = Vec::with_capacity(shape.iter().product());
                for o in 0..outer {
                    let base = o * len * inner;
                    out.extend_from_slice(&a.data()[base + start * inner..base + end * inner]);
                }
                Tensor::new(shape, out)?
            }
            OpKind::Softmax { axis } => {
                let a = val(0);
                let ax = norm_axis("softmax", *axis, a.ndim())?;
                let (outer, len, inner) = axis_split(a.shape(), ax);
                let x = a.data();
                let mut out = vec![T::zero(); x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let mut mx = T::neg_infinity();
                        for k in 0..len {
                            mx = mx.max(x[at(k)]);
                        }
                        let mut s = T::zero();
                        for k in 0..len {
                            let e = (x[at(k)] - mx).exp();
                            out[at(k)] = e;
                            s += e;
                        }
                        for k in 0..len {
                            out[at(k)] = out[at(k)] / s;
                        }
                    }
                }
                Tensor::new(a.shape().to_vec(), out)?
            }
            OpKind::LayerNorm { axis, eps } => {
                let a = val(0);
                let ax = norm_axis("layer_norm", *axis, a.ndim())?;
                let (outer, len, inner) = axis_split(a.shape(), ax);
                let x = a.data();
                let eps = T::lit(*eps);
                let n = T::lit(len as f64);
                let mut out = vec![T::zero(); x.len()];
                let mut inv = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        // Shift by the first element so a constant slice has an exact zero mean.
                        let x0 = x[at(0)];
                        let mut s = T::zero();
                        for k in 0..len {
                            s += x[at(k)] - x0;
                        }
                        let mean = x0 + s / n;
                        let mut var = T::zero();
                        for k in 0..len {
                            let d = x[at(k)] - mean;
                            var += d * d;
                        }
                        let r = T::one() / (var / n + eps).sqrt();
                        inv[o * inner + i] = r;
                        for k in 0..len {
                            out[at(k)] = (x[at(k)] - mean) * r;
                        }
                    }
                }
                return Ok((Tensor::new(a.shape().to_vec(), out)?, inv));
            }
            OpKind::Sigmoid => {
                let a = val(0);
                Tensor::new(
                    a.shape().to_vec(),
                    a.data().iter().map(|&x| kernels::sigmoid(x)).collect(),
                )?
            }
            OpKind::Gelu => {
                let a = val(0);
                Tensor::new(
                    a.shape().to_vec(),
                    a.data().iter().map(|&x| kernels::gelu(x)).collect(),
                )?
            }
            OpKind::EmbeddingLookup { indices } => {
                let table = val(0);
                if table.ndim() != 2 {
                    return Err(Error::shape(
                        "embedding_lookup",
                        format!("table must be 2-d, got {:?}", table.shape()),
                    ));
                }
                let (vocab, dim) = (table.shape()[0], table.shape()[1]);
                if indices.is_empty() {
                    return Err(Error::shape("embedding_lookup", "empty index list"));
                }
                let mut out = Vec::with_capacity(indices.len() * dim);
                for &ix in indices {
                    if ix >= vocab {
                        return Err(Error::shape(
                            "embedding_lookup",
                            format!("index {ix} out of range for vocab {vocab}"),
                        ));
                    }
                    out.extend_from_slice(&table.data()[ix * dim..(ix + 1) * dim]);
                }
                Tensor::new(vec![indices.len(), dim], out)?
            }
            OpKind::Mean { axis } | OpKind::Sum { axis } => {
                let a = val(0);
                let is_mean = matches!(kind, OpKind::Mean { .. });
                match axis {
                    None => {
                        let s: T = a.data().iter().copied().sum();
                        let v = if is_mean {
                            s / T::lit(a.numel() as f64)
                        } else {
                            s
                        };
                        Tensor::scalar(v)
                    }
                    Some(axis) => {
                        let ax = norm_axis(kind.name(), *axis, a.ndim())?;
                        let (outer, len, inner) = axis_split(a.shape(), ax);
                        let mut out = vec![T::zero(); outer * inner];
                        for o in 0..outer {
                            for k in 0..len {
                                for i in 0..inner {
                                    out[o * inner + i] += a.data()[o * len * inner + k * inner + i];
                                }
                            }
                        }
                        if is_mean {
                            let n = T::lit(len as f64);
                            out.iter_mut().for_each(|x| *x = *x / n);
                        }
                        let mut shape = a.shape().to_vec();
                        shape.remove(ax);
                        if shape.is_empty() {
                            shape.push(1);
                        }
                        Tensor::new(shape, out)?
                    }
                }
            }
            OpKind::MseLoss => {
                let (a, b) = (val(0), val(1));
                if a.shape() != b.shape() {
                    return Err(Error::shape(
                        "mse_loss",
                        format!("{:?} vs {:?}", a.shape(), b.shape()),
                    ));
                }
                let s: T = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum();
                Tensor::scalar(s / T::lit(a.numel() as f64))
            }
        };
        Ok((out, Vec::new()))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Leaf gradients accumulate into each leaf tensor's `grad` buffer until
    /// [`Graph::zero_grad`] is called.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 || lt.ndim() > 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        if !self.nodes[loss.0].tracked {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.tracked && !node.inputs.is_empty() {
                let contributions = self.input_grads(id, &g)?;
                for (inp, cg) in node.inputs.iter().zip(contributions) {
                    if !self.nodes[inp.0].tracked {
                        continue;
                    }
                    let Some(cg) = cg else { continue };
                    match &mut grads[inp.0] {
                        Some(acc) => acc.iter_mut().zip(&cg).for_each(|(a, c)| *a += *c),
                        slot @ None => *slot = Some(cg),
                    }
                }
            }
            grads[id] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(&grads) {
            if let (OpKind::Leaf, true, Some(g)) = (&node.op, node.tracked, g) {
                let merged = match node.value.grad() {
                    Some(prev) => prev.iter().zip(g).map(|(a, b)| *a + *b).collect(),
                    None => g.clone(),
                };
                node.value.set_grad(merged);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn input_grads(&self, id: usize, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let node = &self.nodes[id];
        let val = |i: usize| &self.nodes[node.inputs[i].0].value;
        let wants = |i: usize| self.nodes[node.inputs[i].0].tracked;
        let out = &node.value;
        let grads = match &node.op {
            OpKind::Leaf => Vec::new(),
            OpKind::MatMul => {
                let (ga, gb) = matmul_backward(val(0), val(1), g, wants(0), wants(1));
                vec![ga, gb]
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::BroadcastAdd => {
                let (a, b) = (val(0), val(1));
                let plan = Broadcast::new(a.shape(), b.shape()).expect("validated in forward");
                let mut ga = wants(0).then(|| vec![T::zero(); a.numel()]);
                let mut gb = wants(1).then(|| vec![T::zero(); b.numel()]);
                let (ad, bd) = (a.data(), b.data());
                let sign_b = if matches!(node.op, OpKind::Sub) {
                    -T::one()
                } else {
                    T::one()
                };
                let is_mul = matches!(node.op, OpKind::Mul);
                plan.for_each(|i, ia, ib| {
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += if is_mul { g[i] * bd[ib] } else { g[i] };
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += if is_mul { g[i] * ad[ia] } else { sign_b * g[i] };
                    }
                });
                vec![ga, gb]
            }
            OpKind::Scale(c) => {
                let c = T::lit(*c);
                vec![Some(g.iter().map(|&x| x * c).collect())]
            }
            OpKind::Transpose => {
                let nd = out.ndim();
                let (r, c) = (out.shape()[nd - 2], out.shape()[nd - 1]);
                vec![Some(kernels::transpose_last2(
                    g,
                    out.numel() / (r * c),
                    r,
                    c,
                ))]
            }
            OpKind::Reshape(_) => vec![Some(g.to_vec())],
            OpKind::Concat { axis } => {
                let ax = norm_axis("concat", *axis, out.ndim())?;
                let (outer, _, inner) = axis_split(out.shape(), ax);
                let total = out.shape()[ax] * inner;
                let mut offset = 0;
                let mut res = Vec::with_capacity(node.inputs.len());
                for i in 0..node.inputs.len() {
                    let chunk = val(i).shape()[ax] * inner;
                    if wants(i) {
                        let mut gi = Vec::with_capacity(val(i).numel());
                        for o in 0..outer {
                            gi.extend_from_slice(
                                &g[o * total + offset..o * total + offset + chunk],
                            );
                        }
                        res.push(Some(gi));
                    } else {
                        res.push(None);
                    }
                    offset += chunk;
                }
                res
            }
            OpKind::Slice { axis, start, end } => {
                let a = val(0);
                let ax = norm_axis("slice", *axis, a.ndim())?;
                let (outer, len, inner) = axis_split(a.shape(), ax);
                let width = (end - start) * inner;
                let mut ga = vec![T::zero(); a.numel()];
                for o in 0..outer {
                    let base = o * len * inner + start * inner;
                    ga[base..base + width].copy_from_slice(&g[o * width..(o + 1) * width]);
                }
                vec![Some(ga)]
            }
            OpKind::Softmax { axis } => {
                let ax = norm_axis("softmax", *axis, out.ndim())?;
                let (outer, len, inner) = axis_split(out.shape(), ax);
                let y = out.data();
                let mut ga = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let mut dot = T::zero();
                        for k in 0..len {
                            dot += g[at(k)] * y[at(k)];
                        }
                        for k in 0..len {
                            ga[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                vec![Some(ga)]
            }
            OpKind::LayerNorm { axis, .. } => {
                let ax = norm_axis("layer_norm", *axis, out.ndim())?;
                let (outer, len, inner) = axis_split(out.shape(), ax);
                let y = out.data();
                let n = T::lit(len as f64);
                let mut ga = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let r = node.aux[o * inner + i];
                        let (mut mg, mut mgy) = (T::zero(), T::zero());
                        for k in 0..len {
                            mg += g[at(k)];
                            mgy += g[at(k)] * y[at(k)];
                        }
                        mg = mg / n;
                        mgy = mgy / n;
                        for k in 0..len {
                            ga[at(k)] = r * (g[at(k)] - mg - y[at(k)] * mgy);
                        }
                    }
                }
                vec![Some(ga)]
            }
            OpKind::Sigmoid => {
                let y = out.data();
                vec![Some(
                    g.iter()
                        .zip(y)
                        .map(|(&g, &y)| g * y * (T::one() - y))
                        .collect(),
                )]
            }
            OpKind::Gelu => {
                let x = val(0).data();
                vec![Some(
                    g.iter()
                        .zip(x)
                        .map(|(&g, &x)| g * kernels::gelu_grad(x))
                        .collect(),
                )]
            }
            OpKind::EmbeddingLookup { indices } => {
                let table = val(0);
                let dim = table.shape()[1];
                let mut gt = vec![T::zero(); table.numel()];
                for (row, &ix) in indices.iter().enumerate() {
                    for d in 0..dim {
                        gt[ix * dim + d] += g[row * dim + d];
                    }
                }
                vec![Some(gt)]
            }
            OpKind::Mean { axis } | OpKind::Sum { axis } => {
                let a = val(0);
                let is_mean = matches!(node.op, OpKind::Mean { .. });
                match axis {
                    None => {
                        let v = if is_mean {
                            g[0] / T::lit(a.numel() as f64)
                        } else {
                            g[0]
                        };
                        vec![Some(vec![v; a.numel()])]
                    }
                    Some(axis) => {
                        let ax = norm_axis("reduce", *axis, a.ndim())?;
                        let (outer, len, inner) = axis_split(a.shape(), ax);
                        let scale = if is_mean {
                            T::one() / T::lit(len as f64)
                        } else {
                            T::one()
                        };
                        let mut ga = vec![T::zero(); a.numel()];
                        for o in 0..outer {
                            for k in 0..len {
                                for i in 0..inner {
                                    ga[o * len * inner + k * inner + i] = g[o * inner + i] * scale;
                                }
                            }
                        }
                        vec![Some(ga)]
                    }
                }
            }
            OpKind::MseLoss => {
                let (a, b) = (val(0), val(1));
                let k = T::lit(2.0) * g[0] / T::lit(a.numel() as f64);
                let ga: Vec<T> = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| k * (x - y))
                    .collect();
                let gb = wants(1).then(|| ga.iter().map(|&v| -v).collect());
                vec![wants(0).then_some(ga), gb]
            }
        };
        Ok(grads)
    }
}

struct MatmulDims {
    m: usize,
    k: usize,
    n: usize,
    batch: usize,
    a_batched: bool,
    b_batched: bool,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(MatmulDims, Vec<usize>)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape(
            "matmul",
            format!("needs ≥2-d operands, got {a:?} and {b:?}"),
        ));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dims differ: {a:?} × {b:?}"),
        ));
    }
    let lead_a = &a[..a.len() - 2];
    let lead_b = &b[..b.len() - 2];
    let na: usize = lead_a.iter().product();
    let nb: usize = lead_b.iter().product();
    let (lead, batch, a_batched, b_batched) = if lead_a == lead_b {
        (lead_a.to_vec(), na, true, true)
    } else if nb == 1 {
        (lead_a.to_vec(), na, true, false)
    } else if na == 1 {
        (lead_b.to_vec(), nb, false, true)
    } else {
        return Err(Error::shape(
            "matmul",
            format!("batch dims differ: {a:?} × {b:?}"),
        ));
    };
    let mut shape = lead;
    shape.push(m);
    shape.push(n);
    Ok((
        MatmulDims {
            m,
            k,
            n,
            batch,
            a_batched,
            b_batched,
        },
        shape,
    ))
}

fn matmul_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, shape) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![T::zero(); d.batch * d.m * d.n];
    for bi in 0..d.batch {
        let ao = if d.a_batched { bi * d.m * d.k } else { 0 };
        let bo = if d.b_batched { bi * d.k * d.n } else { 0 };
        kernels::mm_acc(
            &a.data()[ao..ao + d.m * d.k],
            &b.data()[bo..bo + d.k * d.n],
            &mut out[bi * d.m * d.n..(bi + 1) * d.m * d.n],
            d.m,
            d.k,
            d.n,
        );
    }
    Tensor::new(shape, out)
}

fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &[T],
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (d, _) = matmul_dims(a.shape(), b.shape()).expect("validated in forward");
    let mut ga = want_a.then(|| vec![T::zero(); a.numel()]);
    let mut gb = want_b.then(|| vec![T::zero(); b.numel()]);
    for bi in 0..d.batch {
        let ao = if d.a_batched { bi * d.m * d.k } else { 0 };
        let bo = if d.b_batched { bi * d.k * d.n } else { 0 };
        let gc = &g[bi * d.m * d.n..(bi + 1) * d.m * d.n];
        if let Some(ga) = ga.as_mut() {
            kernels::mm_nt_acc(
                gc,
                &b.data()[bo..bo + d.k * d.n],
                &mut ga[ao..ao + d.m * d.k],
                d.m,
                d.n,
                d.k,
            );
        }
        if let Some(gb) = gb.as_mut() {
            kernels::mm_tn_acc(
                &a.data()[ao..ao + d.m * d.k],
                gc,
                &mut gb[bo..bo + d.k * d.n],
                d.m,
                d.k,
                d.n,
            );
        }
    }
    (ga, gb)
}
