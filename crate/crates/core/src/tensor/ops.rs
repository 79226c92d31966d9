use std::ops::Range;
use std::rc::Rc;

use super::tape::{gelu, Op, Var};
use super::{gemm_acc, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Boolean attention mask, `true` = may attend.
#[derive(Clone, Debug)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allow: Rc<[bool]>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != rows * cols {
            return Err(Error::dim("Mask::new", &[rows, cols], &[allow.len()]));
        }
        Ok(Mask {
            rows,
            cols,
            allow: allow.into(),
        })
    }

    /// Position `i` attends to `j <= i`.
    pub fn causal(n: usize) -> Self {
        let allow: Vec<bool> = (0..n * n).map(|k| k % n <= k / n).collect();
        Mask {
            rows: n,
            cols: n,
            allow: allow.into(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.cols + j]
    }
}

impl<'t> Var<'t> {
    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn map(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes();
            let v = &nodes[self.id].value;
            Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
                .expect("same shape")
        };
        self.unary(value, op)
    }

    fn binary_rg(self, other: Var<'t>) -> bool {
        self.requires_grad() || other.requires_grad()
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (value, m, k, n) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::dim("matmul", a.shape(), b.shape()));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; m * n];
            gemm_acc(a.data(), b.data(), &mut out, m, k, n);
            (Tensor::new([m, n], out)?, m, k, n)
        };
        let rg = self.binary_rg(other);
        Ok(self.tape.push(
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let (value, m, n) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id].value;
            if a.shape().len() != 2 {
                return Err(Error::dim("transpose", a.shape(), &[]));
            }
            let (m, n) = (a.shape()[0], a.shape()[1]);
            let mut out = vec![0.0; m * n];
            for r in 0..m {
                for c in 0..n {
                    out[c * m + r] = a.data()[r * n + c];
                }
            }
            (Tensor::new([n, m], out)?, m, n)
        };
        Ok(self.unary(value, Op::Transpose { a: self.id, m, n }))
    }

    fn elementwise(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            if a.shape() == b.shape() {
                let d = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), d)?
            } else if b.numel() == 1 && b.shape().len() <= 1 {
                let y = b.data()[0];
                let d = a.data().iter().map(|&x| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), d)?
            } else if a.numel() == 1 && a.shape().len() <= 1 {
                let x = a.data()[0];
                let d = b.data().iter().map(|&y| f(x, y)).collect();
                Tensor::new(b.shape().to_vec(), d)?
            } else {
                return Err(Error::dim(name, a.shape(), b.shape()));
            }
        };
        let rg = self.binary_rg(other);
        Ok(self.tape.push(value, op, rg))
    }

    /// Same-shape or scalar-broadcast addition.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Add {
            a: self.id,
            b: other.id,
        };
        self.elementwise(other, "add", |x, y| x + y, op)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Sub {
            a: self.id,
            b: other.id,
        };
        self.elementwise(other, "sub", |x, y| x - y, op)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Mul {
            a: self.id,
            b: other.id,
        };
        self.elementwise(other, "mul", |x, y| x * y, op)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.affine(s, 0.0)
    }

    /// `s * x + shift`
    pub fn affine(self, s: f64, shift: f64) -> Var<'t> {
        let op = Op::Affine { a: self.id, scale: s };
        self.map(|x| s * x + shift, op)
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` tensor.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id].value;
            let b = &nodes[bias.id].value;
            if b.numel() != x.cols() || x.shape().is_empty() {
                return Err(Error::dim("add_bias", x.shape(), b.shape()));
            }
            let mut d = x.data().to_vec();
            for row in d.chunks_mut(b.numel()) {
                row.iter_mut().zip(b.data()).for_each(|(r, v)| *r += v);
            }
            Tensor::new(x.shape().to_vec(), d)?
        };
        let rg = self.binary_rg(bias);
        Ok(self.tape.push(
            value,
            Op::AddBias {
                x: self.id,
                bias: bias.id,
            },
            rg,
        ))
    }

    /// `x W + b`
    pub fn linear(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.matmul(weight)?.add_bias(bias)
    }

    pub fn gelu(self) -> Var<'t> {
        self.map(gelu, Op::Gelu(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        self.map(|x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.map(
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid(self.id),
        )
    }

    pub fn exp(self) -> Var<'t> {
        self.map(f64::exp, Op::Exp(self.id))
    }

    pub fn log(self) -> Var<'t> {
        self.map(f64::ln, Op::Log(self.id))
    }

    pub fn recip(self) -> Var<'t> {
        self.map(|x| 1.0 / x, Op::Recip(self.id))
    }

    /// Clamps into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let op = Op::Clamp { x: self.id, lo, hi };
        self.map(|x| x.clamp(lo, hi), op)
    }

    pub fn sum(self) -> Var<'t> {
        let s = {
            let nodes = self.tape.nodes();
            nodes[self.id].value.data().iter().sum::<f64>()
        };
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let s = {
            let nodes = self.tape.nodes();
            let v = &nodes[self.id].value;
            v.data().iter().sum::<f64>() / v.numel() as f64
        };
        self.unary(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Row-wise softmax, stabilized by subtracting the row maximum. Masked
    /// entries get probability exactly zero.
    pub fn softmax_rows(self, mask: Option<&Mask>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id].value;
            if x.data().iter().any(|v| v.is_nan()) {
                return Err(Error::Numerical {
                    op: "softmax_rows",
                    detail: "NaN in input".into(),
                });
            }
            let (rows, cols) = (x.rows(), x.cols());
            if let Some(m) = mask {
                if m.shape() != (rows, cols) {
                    return Err(Error::dim("softmax_rows mask", x.shape(), &[m.rows, m.cols]));
                }
            }
            let mut out = vec![0.0; rows * cols];
            for r in 0..rows {
                let allowed = |c: usize| mask.map_or(true, |m| m.allows(r, c));
                let xr = x.row(r);
                let max = (0..cols)
                    .filter(|&c| allowed(c))
                    .map(|c| xr[c])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(Error::Numerical {
                        op: "softmax_rows",
                        detail: format!("row {r} is fully masked"),
                    });
                }
                let orow = &mut out[r * cols..(r + 1) * cols];
                let mut total = 0.0;
                for c in 0..cols {
                    if allowed(c) {
                        orow[c] = (xr[c] - max).exp();
                        total += orow[c];
                    }
                }
                orow.iter_mut().for_each(|v| *v /= total);
            }
            Tensor::new(x.shape().to_vec(), out)?
        };
        Ok(self.unary(value, Op::SoftmaxRows { x: self.id }))
    }

    pub fn log_softmax_rows(self) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id].value;
            if x.data().iter().any(|v| v.is_nan()) {
                return Err(Error::Numerical {
                    op: "log_softmax_rows",
                    detail: "NaN in input".into(),
                });
            }
            let cols = x.cols();
            let mut out = Vec::with_capacity(x.numel());
            for r in 0..x.rows() {
                let xr = x.row(r);
                let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + xr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                out.extend(xr.iter().map(|v| v - lse));
            }
            debug_assert_eq!(out.len(), x.rows() * cols);
            Tensor::new(x.shape().to_vec(), out)?
        };
        Ok(self.unary(value, Op::LogSoftmaxRows { x: self.id }))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias` (both of length `cols`).
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (value, xhat, inv_std) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id].value;
            let g = &nodes[gain.id].value;
            let b = &nodes[bias.id].value;
            let cols = x.cols();
            if g.numel() != cols || b.numel() != cols {
                return Err(Error::dim("layer_norm", x.shape(), g.shape()));
            }
            let mut xhat = Vec::with_capacity(x.numel());
            let mut inv_std = Vec::with_capacity(x.rows());
            for r in 0..x.rows() {
                let xr = x.row(r);
                let mean = xr.iter().sum::<f64>() / cols as f64;
                let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std.push(is);
                xhat.extend(xr.iter().map(|v| (v - mean) * is));
            }
            let out: Vec<f64> = xhat
                .chunks(cols)
                .flat_map(|hr| {
                    hr.iter()
                        .zip(g.data())
                        .zip(b.data())
                        .map(|((h, gg), bb)| h * gg + bb)
                })
                .collect();
            (Tensor::new(x.shape().to_vec(), out)?, xhat, inv_std)
        };
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Scales each row to unit L2 norm.
    pub fn l2_normalize_rows(self) -> Var<'t> {
        let (value, norms) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id].value;
            let cols = x.cols();
            let mut norms = Vec::with_capacity(x.rows());
            let mut out = Vec::with_capacity(x.numel());
            for r in 0..x.rows() {
                let xr = x.row(r);
                let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                norms.push(n);
                out.extend(xr.iter().map(|v| v / n));
            }
            debug_assert_eq!(out.len(), x.rows() * cols);
            (Tensor::new(x.shape().to_vec(), out).expect("shape"), norms)
        };
        self.unary(value, Op::L2NormalizeRows { x: self.id, norms })
    }

    /// `out[i] = x.flat[index[i]]`, with `usize::MAX` producing zero.
    pub fn gather(self, index: Vec<usize>, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        let value = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id].value;
            if shape.iter().product::<usize>() != index.len() {
                return Err(Error::dim("gather", &shape, &[index.len()]));
            }
            if let Some(&bad) = index.iter().find(|&&i| i != usize::MAX && i >= x.numel()) {
                return Err(Error::dim("gather index", x.shape(), &[bad]));
            }
            let d = index
                .iter()
                .map(|&i| if i == usize::MAX { 0.0 } else { x.data()[i] })
                .collect();
            Tensor::new(shape, d)?
        };
        Ok(self.unary(
            value,
            Op::Gather {
                x: self.id,
                index: index.into(),
            },
        ))
    }

    /// Selects whole rows of a matrix (embedding lookup, slicing).
    pub fn select_rows(self, rows: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::dim("select_rows", &shape, &[]));
        }
        let (n, cols) = (shape[0], shape[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::dim("select_rows", &shape, &[bad]));
        }
        let index = rows
            .iter()
            .flat_map(|&r| (r * cols)..(r * cols + cols))
            .collect();
        self.gather(index, [rows.len(), cols])
    }

    pub fn slice_rows(self, range: Range<usize>) -> Result<Var<'t>> {
        let rows: Vec<usize> = range.collect();
        self.select_rows(&rows)
    }

    pub fn slice_cols(self, range: Range<usize>) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 || range.end > shape[1] {
            return Err(Error::dim("slice_cols", &shape, &[range.start, range.end]));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let width = range.len();
        let index = (0..rows)
            .flat_map(|r| range.clone().map(move |c| r * cols + c))
            .collect();
        self.gather(index, [rows, width])
    }

    /// Picks `x[i, cols[i]]` for each row, returning a vector.
    pub fn pick(self, cols: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != cols.len() {
            return Err(Error::dim("pick", &shape, &[cols.len()]));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= shape[1]) {
            return Err(Error::dim("pick", &shape, &[bad]));
        }
        let index = cols
            .iter()
            .enumerate()
            .map(|(r, &c)| r * shape[1] + c)
            .collect();
        self.gather(index, [cols.len()])
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let value = self.value().reshape(shape)?;
        Ok(self.unary(value, Op::Reshape(self.id)))
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of zero tensors"))?;
        let tape = first.tape;
        let (value, rg) = {
            let nodes = tape.nodes();
            let cols = nodes[first.id].value.cols();
            let mut data = Vec::new();
            let mut rows = 0;
            let mut rg = false;
            for p in parts {
                let v = &nodes[p.id].value;
                if v.shape().len() != 2 || v.cols() != cols {
                    return Err(Error::dim("concat_rows", nodes[first.id].value.shape(), v.shape()));
                }
                rows += v.rows();
                data.extend_from_slice(v.data());
                rg |= nodes[p.id].requires_grad;
            }
            (Tensor::new([rows, cols], data)?, rg)
        };
        Ok(tape.push(value, Op::ConcatRows(parts.iter().map(|p| p.id).collect()), rg))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of zero tensors"))?;
        let tape = first.tape;
        let (value, rg) = {
            let nodes = tape.nodes();
            let rows = nodes[first.id].value.rows();
            let mut rg = false;
            let mut total_cols = 0;
            for p in parts {
                let v = &nodes[p.id].value;
                if v.shape().len() != 2 || v.rows() != rows {
                    return Err(Error::dim("concat_cols", nodes[first.id].value.shape(), v.shape()));
                }
                total_cols += v.cols();
                rg |= nodes[p.id].requires_grad;
            }
            let mut data = Vec::with_capacity(rows * total_cols);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(nodes[p.id].value.row(r));
                }
            }
            (Tensor::new([rows, total_cols], data)?, rg)
        };
        Ok(tape.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), rg))
    }
}
