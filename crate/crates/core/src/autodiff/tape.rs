//! Reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node holding its forward value and the inputs it
//! needs for the backward pass. Node indices are a topological order by
//! construction, so `backward` walks them once from the loss down to zero.

use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LogSumExp { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Gather { x: Var, idx: Vec<usize> },
    Sum(Var),
    Reshape(Var),
    MulConst { x: Var, mask: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, &[s])),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input. It still receives a gradient, which tests use.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter input; repeated calls for the same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = dims2(self.value(a), "matmul")?;
        let (k2, m) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &[self.value(a).shape(), self.value(b).shape()]));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(op, &[self.value(a).shape(), self.value(b).shape()]));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = va.shape().to_vec();
        self.push(Tensor::new(shape, data).expect("same shape"), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| f(*v)).collect();
        let shape = vx.shape().to_vec();
        self.push(Tensor::new(shape, data).expect("same shape"), op)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.map(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// `m[r, c] + v[c]` for every row `r`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(m), "add_row")?;
        if self.value(v).shape() != [c] {
            return Err(Error::shape("add_row", &[self.value(m).shape(), self.value(v).shape()]));
        }
        let vm = self.value(m).data();
        let vv = self.value(v).data();
        let data = (0..r * c).map(|i| vm[i] + vv[i % c]).collect();
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::AddRow(m, v)))
    }

    /// `m[r, c] + v[r]` for every column `c`.
    pub fn add_col(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(m), "add_col")?;
        if self.value(v).shape() != [r] {
            return Err(Error::shape("add_col", &[self.value(m).shape(), self.value(v).shape()]));
        }
        let vm = self.value(m).data();
        let vv = self.value(v).data();
        let data = (0..r * c).map(|i| vm[i] + vv[i / c]).collect();
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::AddCol(m, v)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() == 0 || vx.rank() > 2 {
            return Err(Error::shape("softmax", &[vx.shape()]));
        }
        let c = vx.cols();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let shape = vx.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Softmax(x)))
    }

    /// Stable log-sum-exp reducing `axis`. A vector reduces to a scalar; a
    /// matrix reduces to a vector over the remaining axis.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        let out = match (vx.shape(), axis) {
            ([_], 0) => Tensor::scalar(super::tensor::logsumexp(vx.data())),
            ([r, c], 0) => {
                let (r, c) = (*r, *c);
                let col: Vec<f64> = (0..c)
                    .map(|j| {
                        let column: Vec<f64> = (0..r).map(|i| vx.data()[i * c + j]).collect();
                        super::tensor::logsumexp(&column)
                    })
                    .collect();
                Tensor::vector(col)
            }
            ([_, _], 1) => Tensor::vector(
                (0..vx.rows())
                    .map(|i| super::tensor::logsumexp(vx.row(i)))
                    .collect(),
            ),
            (s, _) => return Err(Error::shape("logsumexp", &[s, &[axis]])),
        };
        Ok(self.push(out, Op::LogSumExp { x, axis }))
    }

    /// Row-wise normalization followed by an elementwise gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "layer_norm")?;
        if self.value(gain).shape() != [c] || self.value(bias).shape() != [c] {
            return Err(Error::shape(
                "layer_norm",
                &[self.value(x).shape(), self.value(gain).shape(), self.value(bias).shape()],
            ));
        }
        let vx = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &vx[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[i] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(
            Tensor::new(vec![r, c], out)?,
            Op::LayerNorm { x, gain, bias, xhat, inv_std },
        ))
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = dims2(self.value(table), "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape {
                op: "embedding",
                shapes: format!("index {bad} out of range for table {:?}", self.value(table).shape()),
            });
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::Embedding { table, ids: ids.to_vec() },
        ))
    }

    /// Concatenation along `axis` (0 for vectors; 0 or 1 for matrices).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::shape("concat", &[]));
        }
        let shapes: Vec<Vec<usize>> = inputs.iter().map(|v| self.value(*v).shape().to_vec()).collect();
        let bad = || Error::shape("concat", &shapes.iter().map(Vec::as_slice).collect::<Vec<_>>());
        let rank = shapes[0].len();
        if shapes.iter().any(|s| s.len() != rank) || rank == 0 || rank > 2 || axis >= rank {
            return Err(bad());
        }
        let out = if rank == 1 || axis == 0 {
            if rank == 2 && shapes.iter().any(|s| s[1] != shapes[0][1]) {
                return Err(bad());
            }
            let mut data = Vec::new();
            for v in inputs {
                data.extend_from_slice(self.value(*v).data());
            }
            let mut shape = shapes[0].clone();
            shape[0] = shapes.iter().map(|s| s[0]).sum();
            Tensor::new(shape, data)?
        } else {
            let r = shapes[0][0];
            if shapes.iter().any(|s| s[0] != r) {
                return Err(bad());
            }
            let c: usize = shapes.iter().map(|s| s[1]).sum();
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                for v in inputs {
                    data.extend_from_slice(self.value(*v).row(i));
                }
            }
            Tensor::new(vec![r, c], data)?
        };
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Half-open slice `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let vx = self.value(x);
        let shape = vx.shape().to_vec();
        let extent = *shape.get(axis).ok_or_else(|| Error::shape("slice", &[&shape, &[axis]]))?;
        if start >= end || end > extent || shape.len() > 2 {
            return Err(Error::shape("slice", &[&shape, &[start, end]]));
        }
        let out = if shape.len() == 1 {
            Tensor::vector(vx.data()[start..end].to_vec())
        } else if axis == 0 {
            let c = shape[1];
            Tensor::new(vec![end - start, c], vx.data()[start * c..end * c].to_vec())?
        } else {
            let (r, c) = (shape[0], shape[1]);
            let mut data = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                data.extend_from_slice(&vx.data()[i * c + start..i * c + end]);
            }
            Tensor::new(vec![r, end - start], data)?
        };
        Ok(self.push(out, Op::Slice { x, axis, start }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "transpose")?;
        let data = transpose_raw(self.value(x).data(), r, c);
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose(x)))
    }

    /// Picks entries by flat (row-major) index into a vector.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= vx.len()) {
            return Err(Error::Shape {
                op: "gather",
                shapes: format!("flat index {bad} out of range for {:?}", vx.shape()),
            });
        }
        let data = idx.iter().map(|&i| vx.data()[i]).collect();
        Ok(self.push(Tensor::vector(data), Op::Gather { x, idx: idx.to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        if self.value(x).shape() != mask.shape() {
            return Err(Error::shape("mul_const", &[self.value(x).shape(), mask.shape()]));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(mask.data())
            .map(|(a, b)| a * b)
            .collect();
        let shape = mask.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::MulConst { x, mask }))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Backward> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", &[self.value(loss).shape()]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Backward {
            grads,
            params: self.params.iter().map(|(k, v)| (*k, *v)).collect(),
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (n, k) = (va.shape()[0], va.shape()[1]);
                let m = vb.shape()[1];
                let bt = transpose_raw(vb.data(), k, m);
                let da = matmul_raw(g.data(), &bt, n, m, k);
                let at = transpose_raw(va.data(), n, k);
                let db = matmul_raw(&at, g.data(), k, n, m);
                acc(*a, Tensor::new(vec![n, k], da)?);
                acc(*b, Tensor::new(vec![k, m], db)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                let mut neg = g.clone();
                neg.scale_in_place(-1.0);
                acc(*b, neg);
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let da = g.data().iter().zip(vb).map(|(g, y)| g * y).collect();
                let db = g.data().iter().zip(va).map(|(g, x)| g * x).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), da)?);
                acc(*b, Tensor::new(g.shape().to_vec(), db)?);
            }
            Op::Scale(x, f) => {
                let mut t = g.clone();
                t.scale_in_place(*f);
                acc(*x, t);
            }
            Op::AddRow(m, v) => {
                let c = g.cols();
                let mut dv = vec![0.0; c];
                for (j, gv) in g.data().iter().enumerate() {
                    dv[j % c] += gv;
                }
                acc(*m, g.clone());
                acc(*v, Tensor::vector(dv));
            }
            Op::AddCol(m, v) => {
                let c = g.cols();
                let dv = g.data().chunks(c).map(|row| row.iter().sum()).collect();
                acc(*m, g.clone());
                acc(*v, Tensor::vector(dv));
            }
            Op::Tanh(x) => {
                let d = g.data().iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                let d = g
                    .data()
                    .iter()
                    .zip(vx)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Softmax(x) => {
                let c = out.cols();
                let mut d = vec![0.0; out.len()];
                for ((drow, yrow), grow) in d.chunks_mut(c).zip(out.data().chunks(c)).zip(g.data().chunks(c)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        drow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                acc(*x, Tensor::new(out.shape().to_vec(), d)?);
            }
            Op::LogSumExp { x, axis } => {
                let vx = self.value(*x);
                let shape = vx.shape().to_vec();
                let mut d = vec![0.0; vx.len()];
                match (shape.as_slice(), axis) {
                    ([_], _) => {
                        let (o, gg) = (out.item(), g.item());
                        for (dv, xv) in d.iter_mut().zip(vx.data()) {
                            *dv = gg * (xv - o).exp();
                        }
                    }
                    ([_, c], 0) => {
                        for (idx, dv) in d.iter_mut().enumerate() {
                            let j = idx % c;
                            *dv = g.data()[j] * (vx.data()[idx] - out.data()[j]).exp();
                        }
                    }
                    ([_, c], _) => {
                        for (idx, dv) in d.iter_mut().enumerate() {
                            let r = idx / c;
                            *dv = g.data()[r] * (vx.data()[idx] - out.data()[r]).exp();
                        }
                    }
                    _ => unreachable!("checked in forward"),
                }
                acc(*x, Tensor::new(shape, d)?);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let c = out.cols();
                let r = out.rows();
                let gv = self.value(*gain).data();
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let grow = &g.data()[i * c..(i + 1) * c];
                    let hrow = &xhat[i * c..(i + 1) * c];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..c {
                        dgain[j] += grow[j] * hrow[j];
                        dbias[j] += grow[j];
                        let dh = grow[j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[j];
                    }
                    mean_dh /= c as f64;
                    mean_dh_h /= c as f64;
                    for j in 0..c {
                        let dh = grow[j] * gv[j];
                        dx[i * c + j] = inv_std[i] * (dh - mean_dh - hrow[j] * mean_dh_h);
                    }
                }
                acc(*x, Tensor::new(vec![r, c], dx)?);
                acc(*gain, Tensor::vector(dgain));
                acc(*bias, Tensor::vector(dbias));
            }
            Op::Embedding { table, ids } => {
                let t = self.value(*table);
                let d = t.cols();
                let mut dt = Tensor::zeros(t.shape());
                for (row, &id) in ids.iter().enumerate() {
                    let src = &g.data()[row * d..(row + 1) * d];
                    for (dst, s) in dt.data_mut()[id * d..(id + 1) * d].iter_mut().zip(src) {
                        *dst += s;
                    }
                }
                acc(*table, dt);
            }
            Op::Concat { inputs, axis } => {
                let rank = out.rank();
                if rank == 1 || *axis == 0 {
                    let mut offset = 0;
                    for v in inputs {
                        let shape = self.value(*v).shape().to_vec();
                        let n = self.value(*v).len();
                        acc(*v, Tensor::new(shape, g.data()[offset..offset + n].to_vec())?);
                        offset += n;
                    }
                } else {
                    let total_c = out.cols();
                    let r = out.rows();
                    let mut offset = 0;
                    for v in inputs {
                        let c = self.value(*v).cols();
                        let mut data = Vec::with_capacity(r * c);
                        for i in 0..r {
                            data.extend_from_slice(&g.data()[i * total_c + offset..i * total_c + offset + c]);
                        }
                        acc(*v, Tensor::new(vec![r, c], data)?);
                        offset += c;
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                let vx = self.value(*x);
                let mut dx = Tensor::zeros(vx.shape());
                if vx.rank() == 1 {
                    dx.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                } else if *axis == 0 {
                    let c = vx.cols();
                    dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                } else {
                    let c = vx.cols();
                    let w = g.cols();
                    for i in 0..vx.rows() {
                        dx.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                    }
                }
                acc(*x, dx);
            }
            Op::Transpose(x) => {
                let (r, c) = (g.rows(), g.cols());
                acc(*x, Tensor::new(vec![c, r], transpose_raw(g.data(), r, c))?);
            }
            Op::Gather { x, idx } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (&i, gv) in idx.iter().zip(g.data()) {
                    dx.data_mut()[i] += gv;
                }
                acc(*x, dx);
            }
            Op::Sum(x) => {
                acc(*x, Tensor::filled(self.value(*x).shape(), g.item()));
            }
            Op::Reshape(x) => {
                acc(*x, g.clone().reshaped(self.value(*x).shape().to_vec())?);
            }
            Op::MulConst { x, mask } => {
                let d = g.data().iter().zip(mask.data()).map(|(a, b)| a * b).collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Backward {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Backward {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter in `store`; parameters that never
    /// reached the loss get exact zeros.
    pub fn into_gradients(mut self, store: &ParamStore) -> Gradients {
        let mut out = Gradients::zeros(store);
        for (id, v) in &self.params {
            if let Some(g) = self.grads.get_mut(v.0).and_then(Option::take) {
                out.set(*id, g);
            }
        }
        out
    }
}
