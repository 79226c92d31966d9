use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::{gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Recorded operation. Input references always point at earlier nodes, so the
/// node vector is a topological order and backward is a reverse sweep.
pub(crate) enum Op {
    Leaf,
    Param,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Transpose { a: usize, m: usize, n: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Affine { a: usize, scale: f64 },
    AddBias { x: usize, bias: usize },
    Gelu(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Recip(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    Sum(usize),
    Mean(usize),
    SoftmaxRows { x: usize },
    LogSoftmaxRows { x: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    L2NormalizeRows { x: usize, norms: Vec<f64> },
    Gather { x: usize, index: Rc<[usize]> },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Reshape(usize),
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

/// Records operations in execution order. Not `Sync`; one tape per thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Loads a parameter. Repeated loads of the same id return the same node,
    /// so a parameter used by several modules accumulates one gradient.
    pub fn param<'t>(&'t self, store: &ParamStore, id: ParamId) -> Var<'t> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let var = self.push(store.value(id).clone(), Op::Param, true);
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Accumulated gradients of every parameter loaded on this tape.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let nodes = self.nodes.borrow();
        let mut out: Vec<(ParamId, Tensor)> = self
            .params
            .borrow()
            .iter()
            .filter_map(|(&pid, &node)| {
                let n = &nodes[node];
                n.grad.as_ref().map(|g| {
                    (pid, Tensor::new(n.value.shape().to_vec(), g.clone()).expect("grad shape"))
                })
            })
            .collect();
        out.sort_by_key(|(pid, _)| *pid);
        out
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data()[0]
    }

    pub fn grad(&self) -> Option<Tensor> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        n.grad
            .as_ref()
            .map(|g| Tensor::new(n.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Reverse sweep from a scalar. Gradients land on leaves and parameters and
    /// accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(self) -> Result<()> {
        let mut nodes = self.tape.nodes.borrow_mut();
        if nodes[self.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[self.id].value.shape()
            )));
        }
        let leaf_grads = reverse_sweep(&nodes, self.id);
        for (id, g) in leaf_grads {
            let slot = &mut nodes[id].grad;
            match slot {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn reverse_sweep(nodes: &[Node], root: usize) -> Vec<(usize, Vec<f64>)> {
    let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
    grads.resize_with(root + 1, || None);
    grads[root] = Some(vec![1.0]);
    let mut leaves = Vec::new();

    for i in (0..=root).rev() {
        let Some(g) = grads[i].take() else { continue };
        let node = &nodes[i];
        if !node.requires_grad {
            continue;
        }
        let out = node.value.data();
        let mut acc = Acc {
            grads: &mut grads,
            nodes,
        };
        match &node.op {
            Op::Leaf | Op::Param => leaves.push((i, g)),
            &Op::MatMul { a, b, m, k, n } => {
                if let Some(da) = acc.slot(a) {
                    gemm_nt_acc(&g, nodes[b].value.data(), da, m, n, k);
                }
                if let Some(db) = acc.slot(b) {
                    gemm_tn_acc(nodes[a].value.data(), &g, db, m, k, n);
                }
            }
            &Op::Transpose { a, m, n } => {
                if let Some(da) = acc.slot(a) {
                    for r in 0..m {
                        for c in 0..n {
                            da[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                acc.broadcast_add(a, &g, 1.0);
                acc.broadcast_add(b, &g, 1.0);
            }
            &Op::Sub { a, b } => {
                acc.broadcast_add(a, &g, 1.0);
                acc.broadcast_add(b, &g, -1.0);
            }
            &Op::Mul { a, b } => {
                let av = nodes[a].value.data();
                let bv = nodes[b].value.data();
                let prod_grad = |other: &[f64]| -> Vec<f64> {
                    if other.len() == 1 {
                        g.iter().map(|x| x * other[0]).collect()
                    } else {
                        g.iter().zip(other).map(|(x, y)| x * y).collect()
                    }
                };
                if acc.wants(a) {
                    acc.broadcast_add(a, &prod_grad(bv), 1.0);
                }
                if acc.wants(b) {
                    acc.broadcast_add(b, &prod_grad(av), 1.0);
                }
            }
            &Op::Affine { a, scale } => {
                if let Some(da) = acc.slot(a) {
                    da.iter_mut().zip(&g).for_each(|(d, x)| *d += scale * x);
                }
            }
            &Op::AddBias { x, bias } => {
                if let Some(dx) = acc.slot(x) {
                    dx.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                }
                if let Some(db) = acc.slot(bias) {
                    let cols = db.len();
                    for row in g.chunks(cols) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
            }
            &Op::Gelu(x) => {
                let xv = nodes[x].value.data();
                acc.map_into(x, &g, |j, gj| gj * gelu_grad(xv[j]));
            }
            &Op::Relu(x) => {
                let xv = nodes[x].value.data();
                acc.map_into(x, &g, |j, gj| if xv[j] > 0.0 { gj } else { 0.0 });
            }
            &Op::Sigmoid(x) => acc.map_into(x, &g, |j, gj| gj * out[j] * (1.0 - out[j])),
            &Op::Exp(x) => acc.map_into(x, &g, |j, gj| gj * out[j]),
            &Op::Log(x) => {
                let xv = nodes[x].value.data();
                acc.map_into(x, &g, |j, gj| gj / xv[j]);
            }
            &Op::Recip(x) => acc.map_into(x, &g, |j, gj| -gj * out[j] * out[j]),
            &Op::Clamp { x, lo, hi } => {
                let xv = nodes[x].value.data();
                acc.map_into(x, &g, |j, gj| if xv[j] > lo && xv[j] < hi { gj } else { 0.0 });
            }
            &Op::Sum(x) => {
                if let Some(dx) = acc.slot(x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mean(x) => {
                if let Some(dx) = acc.slot(x) {
                    let n = dx.len() as f64;
                    dx.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            &Op::SoftmaxRows { x } => {
                let cols = node.value.cols();
                if let Some(dx) = acc.slot(x) {
                    for ((gr, yr), dr) in g
                        .chunks(cols)
                        .zip(out.chunks(cols))
                        .zip(dx.chunks_mut(cols))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, gj), yj) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yj * (gj - dot);
                        }
                    }
                }
            }
            &Op::LogSoftmaxRows { x } => {
                let cols = node.value.cols();
                if let Some(dx) = acc.slot(x) {
                    for ((gr, yr), dr) in g
                        .chunks(cols)
                        .zip(out.chunks(cols))
                        .zip(dx.chunks_mut(cols))
                    {
                        let total: f64 = gr.iter().sum();
                        for ((d, gj), yj) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += gj - yj.exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let cols = node.value.cols();
                let gain_v = nodes[*gain].value.data();
                if let Some(dg) = acc.slot(*gain) {
                    for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((d, gj), hj) in dg.iter_mut().zip(gr).zip(hr) {
                            *d += gj * hj;
                        }
                    }
                }
                if let Some(db) = acc.slot(*bias) {
                    for gr in g.chunks(cols) {
                        db.iter_mut().zip(gr).for_each(|(d, v)| *d += v);
                    }
                }
                if let Some(dx) = acc.slot(*x) {
                    let n = cols as f64;
                    for (r, ((gr, hr), dr)) in g
                        .chunks(cols)
                        .zip(xhat.chunks(cols))
                        .zip(dx.chunks_mut(cols))
                        .enumerate()
                    {
                        let dh: Vec<f64> = gr.iter().zip(gain_v).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let s = inv_std[r] / n;
                        for ((d, dhj), hj) in dr.iter_mut().zip(&dh).zip(hr) {
                            *d += s * (n * dhj - sum_dh - hj * sum_dh_h);
                        }
                    }
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                let cols = node.value.cols();
                if let Some(dx) = acc.slot(*x) {
                    for (r, ((gr, yr), dr)) in g
                        .chunks(cols)
                        .zip(out.chunks(cols))
                        .zip(dx.chunks_mut(cols))
                        .enumerate()
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, gj), yj) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += (gj - yj * dot) / norms[r];
                        }
                    }
                }
            }
            Op::Gather { x, index } => {
                if let Some(dx) = acc.slot(*x) {
                    for (gi, &src) in g.iter().zip(index.iter()) {
                        if src != usize::MAX {
                            dx[src] += gi;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p].value.numel();
                    if let Some(dp) = acc.slot(p) {
                        dp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(d, v)| *d += v);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total_cols = node.value.cols();
                let mut col0 = 0;
                for &p in parts {
                    let pc = nodes[p].value.cols();
                    if let Some(dp) = acc.slot(p) {
                        for (r, dr) in dp.chunks_mut(pc).enumerate() {
                            let src = &g[r * total_cols + col0..r * total_cols + col0 + pc];
                            dr.iter_mut().zip(src).for_each(|(d, v)| *d += v);
                        }
                    }
                    col0 += pc;
                }
            }
            &Op::Reshape(x) => {
                if let Some(dx) = acc.slot(x) {
                    dx.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                }
            }
        }
    }
    leaves
}

struct Acc<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &'a [Node],
}

impl Acc<'_> {
    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn slot(&mut self, id: usize) -> Option<&mut [f64]> {
        if !self.nodes[id].requires_grad {
            return None;
        }
        let len = self.nodes[id].value.numel();
        Some(self.grads[id].get_or_insert_with(|| vec![0.0; len]))
    }

    /// Adds `sign * g` into `id`, summing when `id` is a broadcast scalar.
    fn broadcast_add(&mut self, id: usize, g: &[f64], sign: f64) {
        if let Some(d) = self.slot(id) {
            if d.len() == g.len() {
                d.iter_mut().zip(g).for_each(|(a, b)| *a += sign * b);
            } else {
                d[0] += sign * g.iter().sum::<f64>();
            }
        }
    }

    fn map_into(&mut self, id: usize, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        if let Some(d) = self.slot(id) {
            for (j, (dj, &gj)) in d.iter_mut().zip(g).enumerate() {
                *dj += f(j, gj);
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
