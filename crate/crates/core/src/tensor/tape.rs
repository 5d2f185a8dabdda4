use std::collections::HashMap;

use rand::Rng;

use super::{
    gemm_acc, gemm_nt_acc, gemm_tn_acc, sigmoid_scalar, CsrMatrix, ParamId, ParamStore, Tensor,
};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn tensor(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul(CsrMatrix, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    SliceRows { input: Var, start: usize },
    SliceCols { input: Var, start: usize },
    Dropout { input: Var, mask: Vec<f64> },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Embedding { table: Var, ids: Vec<usize> },
    Conv1d { input: Var, filters: Var, bias: Var, window: usize },
    ChunkedMaxPool { input: Var, argmax: Vec<usize> },
    Sum(Var),
    Mean(Var),
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Batch statistics produced by a training-mode batch normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    params: HashMap<ParamId, Tensor>,
    leaves: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Gradient of a leaf created with [`Tape::variable`].
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

/// Records executed primitives so gradients can be propagated in reverse order.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    consumed: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.tensor()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Free leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Leaf,
            requires_grad: true,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrows a parameter from the store without copying it.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node {
            value: Value::Borrowed(&p.value),
            op: Op::Leaf,
            requires_grad: p.trainable,
            param: p.trainable.then_some(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn shape2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(Error::Shape(format!("{what}: expected a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape2(a, "matmul lhs")?;
        let (k2, n) = self.shape2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} · {k2}x{n}")));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm_acc(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            k,
            n,
        );
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Product of a constant sparse batch with a dense matrix.
    pub fn sparse_matmul(&mut self, x: &CsrMatrix, w: Var) -> Result<Var> {
        let (k, _) = self.shape2(w, "sparse_matmul rhs")?;
        if x.cols() != k {
            return Err(Error::Shape(format!(
                "sparse_matmul {}x{} · {k}x_",
                x.rows(),
                x.cols()
            )));
        }
        let out = x.matmul(self.value(w));
        Ok(self.push(out, Op::SparseMatMul(x.clone(), w), &[w]))
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, n) = self.shape2(x, "add_bias")?;
        if self.value(b).len() != n {
            return Err(Error::Shape(format!(
                "bias of length {} for {} columns",
                self.value(b).len(),
                n
            )));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b), &[x, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.map(x, |v| v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, sigmoid_scalar);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    /// Softmax over each row of a matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.shape2(x, "softmax_rows")?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        Ok(self.push(out, Op::SoftmaxRows(x), &[x]))
    }

    /// Concatenates matrices along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        let shapes = inputs
            .iter()
            .map(|&v| self.shape2(v, "concat"))
            .collect::<Result<Vec<_>>>()?;
        let out = match axis {
            0 => {
                let cols = shapes[0].1;
                if shapes.iter().any(|s| s.1 != cols) {
                    return Err(Error::Shape(format!("concat rows: {shapes:?}")));
                }
                let rows = shapes.iter().map(|s| s.0).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for &v in inputs {
                    data.extend_from_slice(self.value(v).data());
                }
                Tensor::new(vec![rows, cols], data)?
            }
            1 => {
                let rows = shapes[0].0;
                if shapes.iter().any(|s| s.0 != rows) {
                    return Err(Error::Shape(format!("concat cols: {shapes:?}")));
                }
                let cols: usize = shapes.iter().map(|s| s.1).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row(r));
                    }
                }
                Tensor::new(vec![rows, cols], data)?
            }
            _ => return Err(Error::Shape(format!("concat axis {axis}"))),
        };
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.shape2(x, "slice_rows")?;
        if start >= end || end > m {
            return Err(Error::Shape(format!("slice_rows {start}..{end} of {m}")));
        }
        let data = self.value(x).data()[start * n..end * n].to_vec();
        let out = Tensor::new(vec![end - start, n], data)?;
        Ok(self.push(out, Op::SliceRows { input: x, start }, &[x]))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.shape2(x, "slice_cols")?;
        if start >= end || end > n {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of {n}")));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&src.row(r)[start..end]);
        }
        let out = Tensor::new(vec![m, end - start], data)?;
        Ok(self.push(out, Op::SliceCols { input: x, start }, &[x]))
    }

    /// Inverted dropout: kept units are scaled by `1 / keep`, so evaluation
    /// mode (or `keep == 1`) is the identity and returns `x` unchanged.
    pub fn dropout<R: Rng>(&mut self, x: Var, keep: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::Config(format!("keep probability {keep} outside (0, 1]")));
        }
        if !train || keep >= 1.0 {
            return Ok(x);
        }
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { input: x, mask }, &[x]))
    }

    /// Batch normalisation over the rows of an `n × f` matrix using the
    /// batch's own mean and (biased) variance. Returns the statistics so the
    /// caller can maintain running averages.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchNormStats)> {
        let (n, f) = self.shape2(x, "batchnorm")?;
        if n < 2 {
            return Err(Error::Validation(
                "batch normalisation in training mode needs at least 2 samples".into(),
            ));
        }
        let src = self.value(x).data();
        let mut mean = vec![0.0; f];
        for row in src.chunks(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for row in src.chunks(f) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let out = self.batchnorm_with(x, gamma, beta, &mean, &var, eps, true)?;
        Ok((out, BatchNormStats { mean, var }))
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        self.batchnorm_with(x, gamma, beta, mean, var, eps, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn batchnorm_with(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        batch_stats: bool,
    ) -> Result<Var> {
        let (_, f) = self.shape2(x, "batchnorm")?;
        if mean.len() != f
            || var.len() != f
            || self.value(gamma).len() != f
            || self.value(beta).len() != f
        {
            return Err(Error::Shape(format!("batchnorm statistics for {f} features")));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = Vec::with_capacity(src.len());
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(f) {
            for j in 0..f {
                let xh = (row[j] - mean[j]) * inv_std[j];
                normalized.push(xh);
                out.push(g[j] * xh + b[j]);
            }
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            },
            &[x, gamma, beta],
        ))
    }

    /// Gathers rows of an embedding table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.shape2(table, "embedding table")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Shape(format!("embedding id {bad} >= vocabulary {vocab}")));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![ids.len(), dim], data)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Valid (unpadded) 1-D cross-correlation over the time axis.
    ///
    /// `seq` is `T × d`, `filters` is `w × d × f`, `bias` has length `f`;
    /// the result is `(T - w + 1) × f`.
    pub fn conv1d(&mut self, seq: Var, filters: Var, bias: Var) -> Result<Var> {
        let (t, d) = self.shape2(seq, "conv1d input")?;
        let fs = self.value(filters).shape().to_vec();
        if fs.len() != 3 || fs[1] != d {
            return Err(Error::Shape(format!(
                "conv1d filters {fs:?} for input width {d}"
            )));
        }
        let (w, f) = (fs[0], fs[2]);
        if self.value(bias).len() != f {
            return Err(Error::Shape(format!("conv1d bias for {f} filters")));
        }
        if t < w {
            return Err(Error::Shape(format!(
                "conv1d: sequence of length {t} shorter than window {w}; pad the sequence first"
            )));
        }
        let positions = t - w + 1;
        let mut out = Tensor::zeros(&[positions, f]);
        {
            let x = self.value(seq).data();
            let k = self.value(filters).data();
            let b = self.value(bias).data();
            let od = out.data_mut();
            for p in 0..positions {
                od[p * f..(p + 1) * f].copy_from_slice(b);
            }
            for p in 0..positions {
                let window = &x[p * d..(p + w) * d];
                gemm_acc(window, k, &mut od[p * f..(p + 1) * f], 1, w * d, f);
            }
        }
        Ok(self.push(
            out,
            Op::Conv1d {
                input: seq,
                filters,
                bias,
                window: w,
            },
            &[seq, filters, bias],
        ))
    }

    /// Splits the time axis into `chunks` contiguous pieces whose sizes
    /// differ by at most one (earlier pieces larger) and max-pools each.
    pub fn chunked_maxpool(&mut self, x: Var, chunks: usize) -> Result<Var> {
        let (t, f) = self.shape2(x, "chunked_maxpool")?;
        if chunks == 0 || t < chunks {
            return Err(Error::Shape(format!(
                "chunked_maxpool: {t} positions cannot form {chunks} chunks"
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(chunks * f);
        let mut argmax = Vec::with_capacity(chunks * f);
        for (start, end) in chunk_bounds(t, chunks) {
            for j in 0..f {
                let mut best = start;
                for r in start + 1..end {
                    if src[r * f + j] > src[best * f + j] {
                        best = r;
                    }
                }
                out.push(src[best * f + j]);
                argmax.push(best * f + j);
            }
        }
        let out = Tensor::new(vec![chunks, f], out)?;
        Ok(self.push(out, Op::ChunkedMaxPool { input: x, argmax }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mean = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(mean), Op::Mean(x), &[x])
    }

    /// Summed binary cross-entropy of sigmoid(logits) against 0/1 targets,
    /// evaluated as `max(z, 0) - z·y + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits_sum(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(Error::Shape(format!(
                "bce: logits {:?} vs targets {:?}",
                z.shape(),
                targets.shape()
            )));
        }
        let loss = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.data().to_vec(),
            },
            &[logits],
        ))
    }

    /// Propagates gradients from a scalar `loss` to every leaf that requires
    /// them. A tape can be differentiated only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Tape(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut result = Gradients::default();

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = self.nodes[i].op {
                match self.nodes[i].param {
                    Some(id) => match result.params.get_mut(&id) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            result.params.insert(id, g);
                        }
                    },
                    None => {
                        result.leaves.insert(Var(i), g);
                    }
                }
                continue;
            }
            self.backward_node(i, &g, &mut grads)?;
        }
        Ok(result)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.tensor();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.needs(*a) {
                    let slot = slot(grads, *a, av.shape());
                    gemm_nt_acc(g.data(), bv.data(), slot.data_mut(), m, n, k);
                }
                if self.needs(*b) {
                    let slot = slot(grads, *b, bv.shape());
                    gemm_tn_acc(av.data(), g.data(), slot.data_mut(), m, k, n);
                }
            }
            Op::SparseMatMul(x, w) => {
                let wv = self.value(*w);
                let n = wv.cols();
                let slot = slot(grads, *w, wv.shape());
                x.transpose_matmul_acc(g.data(), slot.data_mut(), n);
            }
            Op::AddBias(x, b) => {
                let n = self.value(*b).len();
                if self.needs(*x) {
                    slot(grads, *x, self.value(*x).shape()).add_assign(g);
                }
                if self.needs(*b) {
                    let slot = slot(grads, *b, self.value(*b).shape());
                    for row in g.data().chunks(n) {
                        for (s, v) in slot.data_mut().iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        slot(grads, v, self.value(v).shape()).add_assign(g);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.needs(v) {
                        let o = self.value(other).data();
                        let slot = slot(grads, v, self.value(v).shape());
                        for ((s, gv), ov) in slot.data_mut().iter_mut().zip(g.data()).zip(o) {
                            *s += gv * ov;
                        }
                    }
                }
            }
            Op::Scale(x, factor) => {
                let slot = slot(grads, *x, self.value(*x).shape());
                for (s, gv) in slot.data_mut().iter_mut().zip(g.data()) {
                    *s += gv * factor;
                }
            }
            Op::Relu(x) => {
                let slot = slot(grads, *x, self.value(*x).shape());
                for ((s, gv), y) in slot.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    if *y > 0.0 {
                        *s += gv;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let slot = slot(grads, *x, self.value(*x).shape());
                for ((s, gv), y) in slot.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    *s += gv * y * (1.0 - y);
                }
            }
            Op::Tanh(x) => {
                let slot = slot(grads, *x, self.value(*x).shape());
                for ((s, gv), y) in slot.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    *s += gv * (1.0 - y * y);
                }
            }
            Op::SoftmaxRows(x) => {
                let n = out.cols();
                let slot = slot(grads, *x, self.value(*x).shape());
                for ((srow, grow), yrow) in slot
                    .data_mut()
                    .chunks_mut(n)
                    .zip(g.data().chunks(n))
                    .zip(out.data().chunks(n))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((s, gv), y) in srow.iter_mut().zip(grow).zip(yrow) {
                        *s += y * (gv - dot);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let total_cols = out.cols();
                let mut offset = 0;
                for &v in inputs {
                    let shape = self.value(v).shape().to_vec();
                    let (rows, cols) = (shape[0], shape[1]);
                    if self.needs(v) {
                        let slot = slot(grads, v, &shape);
                        let sd = slot.data_mut();
                        if *axis == 0 {
                            let src = &g.data()[offset * cols..(offset + rows) * cols];
                            for (s, gv) in sd.iter_mut().zip(src) {
                                *s += gv;
                            }
                        } else {
                            for r in 0..rows {
                                let src = &g.data()
                                    [r * total_cols + offset..r * total_cols + offset + cols];
                                for (s, gv) in sd[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                                    *s += gv;
                                }
                            }
                        }
                    }
                    offset += if *axis == 0 { rows } else { cols };
                }
            }
            Op::Reshape(x) => {
                let slot = slot(grads, *x, self.value(*x).shape());
                for (s, gv) in slot.data_mut().iter_mut().zip(g.data()) {
                    *s += gv;
                }
            }
            Op::SliceRows { input, start } => {
                let n = out.cols();
                let slot = slot(grads, *input, self.value(*input).shape());
                let dst = &mut slot.data_mut()[start * n..start * n + g.len()];
                for (s, gv) in dst.iter_mut().zip(g.data()) {
                    *s += gv;
                }
            }
            Op::SliceCols { input, start } => {
                let width = out.cols();
                let n = self.value(*input).cols();
                let slot = slot(grads, *input, self.value(*input).shape());
                let sd = slot.data_mut();
                for (r, grow) in g.data().chunks(width).enumerate() {
                    for (s, gv) in sd[r * n + start..r * n + start + width].iter_mut().zip(grow) {
                        *s += gv;
                    }
                }
            }
            Op::Dropout { input, mask } => {
                let slot = slot(grads, *input, self.value(*input).shape());
                for ((s, gv), m) in slot.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *s += gv * m;
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            } => {
                let f = inv_std.len();
                let n = g.len() / f;
                let mut sum_g = vec![0.0; f];
                let mut sum_g_xhat = vec![0.0; f];
                for (grow, xrow) in g.data().chunks(f).zip(normalized.chunks(f)) {
                    for j in 0..f {
                        sum_g[j] += grow[j];
                        sum_g_xhat[j] += grow[j] * xrow[j];
                    }
                }
                if self.needs(*beta) {
                    let slot = slot(grads, *beta, self.value(*beta).shape());
                    for (s, v) in slot.data_mut().iter_mut().zip(&sum_g) {
                        *s += v;
                    }
                }
                if self.needs(*gamma) {
                    let slot = slot(grads, *gamma, self.value(*gamma).shape());
                    for (s, v) in slot.data_mut().iter_mut().zip(&sum_g_xhat) {
                        *s += v;
                    }
                }
                if self.needs(*input) {
                    let gam = self.value(*gamma).data().to_vec();
                    let slot = slot(grads, *input, self.value(*input).shape());
                    let nf = n as f64;
                    for ((srow, grow), xrow) in slot
                        .data_mut()
                        .chunks_mut(f)
                        .zip(g.data().chunks(f))
                        .zip(normalized.chunks(f))
                    {
                        for j in 0..f {
                            let scale = gam[j] * inv_std[j];
                            srow[j] += if *batch_stats {
                                scale / nf * (nf * grow[j] - sum_g[j] - xrow[j] * sum_g_xhat[j])
                            } else {
                                scale * grow[j]
                            };
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let dim = self.value(*table).cols();
                let slot = slot(grads, *table, self.value(*table).shape());
                let sd = slot.data_mut();
                for (&id, grow) in ids.iter().zip(g.data().chunks(dim)) {
                    for (s, gv) in sd[id * dim..(id + 1) * dim].iter_mut().zip(grow) {
                        *s += gv;
                    }
                }
            }
            Op::Conv1d {
                input,
                filters,
                bias,
                window,
            } => {
                let d = self.value(*input).cols();
                let f = self.value(*bias).len();
                let positions = out.rows();
                let span = window * d;
                if self.needs(*bias) {
                    let slot = slot(grads, *bias, self.value(*bias).shape());
                    for grow in g.data().chunks(f) {
                        for (s, gv) in slot.data_mut().iter_mut().zip(grow) {
                            *s += gv;
                        }
                    }
                }
                if self.needs(*filters) {
                    let x = self.value(*input).data();
                    let slot = slot(grads, *filters, self.value(*filters).shape());
                    for p in 0..positions {
                        gemm_tn_acc(
                            &x[p * d..p * d + span],
                            &g.data()[p * f..(p + 1) * f],
                            slot.data_mut(),
                            1,
                            span,
                            f,
                        );
                    }
                }
                if self.needs(*input) {
                    let k = self.value(*filters).data();
                    let slot = slot(grads, *input, self.value(*input).shape());
                    for p in 0..positions {
                        gemm_nt_acc(
                            &g.data()[p * f..(p + 1) * f],
                            k,
                            &mut slot.data_mut()[p * d..p * d + span],
                            1,
                            f,
                            span,
                        );
                    }
                }
            }
            Op::ChunkedMaxPool { input, argmax } => {
                let slot = slot(grads, *input, self.value(*input).shape());
                for (&src, gv) in argmax.iter().zip(g.data()) {
                    slot.data_mut()[src] += gv;
                }
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                let slot = slot(grads, *x, self.value(*x).shape());
                slot.data_mut().iter_mut().for_each(|s| *s += gv);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1) as f64;
                let gv = g.data()[0] / n;
                let slot = slot(grads, *x, self.value(*x).shape());
                slot.data_mut().iter_mut().for_each(|s| *s += gv);
            }
            Op::BceWithLogits { logits, targets } => {
                let gv = g.data()[0];
                let z = self.value(*logits).data();
                let slot = slot(grads, *logits, self.value(*logits).shape());
                for ((s, &z), &y) in slot.data_mut().iter_mut().zip(z).zip(targets) {
                    *s += gv * (sigmoid_scalar(z) - y);
                }
            }
        }
        Ok(())
    }
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'g mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

/// `(start, end)` bounds of `chunks` contiguous pieces of `len` positions,
/// sizes differing by at most one with the larger pieces first.
pub(crate) fn chunk_bounds(len: usize, chunks: usize) -> Vec<(usize, usize)> {
    let base = len / chunks;
    let extra = len % chunks;
    let mut bounds = Vec::with_capacity(chunks);
    let mut start = 0;
    for c in 0..chunks {
        let size = base + usize::from(c < extra);
        bounds.push((start, start + size));
        start += size;
    }
    bounds
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[1, 3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_values() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[1, 2], &[0.0, 40.0]));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).data()[0], 0.5);
        assert!((tape.value(y).data()[1] - 1.0).abs() < 1e-12);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!((g.wrt(x).unwrap().data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bce_single_cell_is_ln2() {
        let mut tape = Tape::new();
        let z = tape.variable(t(&[1, 1], &[0.0]));
        let loss = tape.bce_with_logits_sum(z, &t(&[1, 1], &[1.0])).unwrap();
        assert!((tape.value(loss).data()[0] - 2f64.ln()).abs() < 1e-15);
        let g = tape.backward(loss).unwrap();
        assert!((g.wrt(z).unwrap().data()[0] - (0.5 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn bce_confident_correct_is_near_zero() {
        let mut tape = Tape::new();
        let z = tape.variable(t(&[1, 2], &[50.0, -50.0]));
        let loss = tape.bce_with_logits_sum(z, &t(&[1, 2], &[1.0, 0.0])).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-20);
    }

    #[test]
    fn bce_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let z = tape.variable(t(&[1, 2], &[0.0, 0.0]));
        assert!(tape.bce_with_logits_sum(z, &t(&[2, 1], &[1.0, 0.0])).is_err());
    }

    #[test]
    fn conv1d_hand_example() {
        let mut tape = Tape::new();
        let seq = tape.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
        let k = tape.constant(t(&[2, 1, 1], &[1.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv1d(seq, k, b).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 1]);
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn conv1d_zero_filter_gives_bias() {
        let mut tape = Tape::new();
        let seq = tape.constant(t(&[4, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let k = tape.constant(Tensor::zeros(&[3, 2, 2]));
        let b = tape.constant(t(&[2], &[0.5, -1.5]));
        let y = tape.conv1d(seq, k, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn conv1d_short_sequence_errors() {
        let mut tape = Tape::new();
        let seq = tape.constant(t(&[1, 1], &[1.0]));
        let k = tape.constant(t(&[2, 1, 1], &[1.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let err = tape.conv1d(seq, k, b).unwrap_err().to_string();
        assert!(err.contains("pad"), "{err}");
    }

    #[test]
    fn chunked_maxpool_examples() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[4, 1], &[1.0, 4.0, 2.0, 3.0]));
        let y = tape.chunked_maxpool(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 3.0]);
        let g = tape.chunked_maxpool(x, 1).unwrap();
        assert_eq!(tape.value(g).data(), &[4.0]);
        assert!(tape.chunked_maxpool(x, 5).is_err());
    }

    #[test]
    fn chunked_maxpool_routes_to_first_argmax() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[3, 1], &[2.0, 2.0, 1.0]));
        let y = tape.chunked_maxpool(x, 1).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn chunk_bounds_put_larger_chunks_first() {
        assert_eq!(chunk_bounds(7, 3), vec![(0, 3), (3, 5), (5, 7)]);
        assert_eq!(chunk_bounds(4, 2), vec![(0, 2), (2, 4)]);
        assert_eq!(chunk_bounds(5, 1), vec![(0, 5)]);
    }

    #[test]
    fn batchnorm_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 1], &[-1.0, 1.0]));
        let gamma = tape.constant(t(&[1], &[1.0]));
        let beta = tape.constant(t(&[1], &[0.0]));
        let (y, stats) = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-5 && (v[1] - 1.0).abs() < 1e-5);
        assert_eq!(stats.mean, vec![0.0]);
        assert_eq!(stats.var, vec![1.0]);

        let zero = tape.constant(t(&[1], &[0.0]));
        let shift = tape.constant(t(&[1], &[0.3]));
        let (y, _) = tape.batchnorm_train(x, zero, shift, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.3, 0.3]);

        let single = tape.constant(t(&[1, 1], &[2.0]));
        assert!(tape.batchnorm_train(single, gamma, beta, 1e-5).is_err());
    }

    #[test]
    fn batchnorm_eval_ignores_batch_composition() {
        let mut tape = Tape::new();
        let gamma = tape.constant(t(&[2], &[1.5, 0.5]));
        let beta = tape.constant(t(&[2], &[0.1, -0.1]));
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let mean = [0.5, 1.0];
        let var = [2.0, 3.0];
        let ya = tape.batchnorm_eval(a, gamma, beta, &mean, &var, 1e-5).unwrap();
        let yb = tape.batchnorm_eval(b, gamma, beta, &mean, &var, 1e-5).unwrap();
        assert_eq!(tape.value(ya).row(0), tape.value(yb).row(0));
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[100, 100], 1.0));
        assert_eq!(tape.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
        assert!(tape.dropout(x, 0.0, true, &mut rng).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]));
        let shifted = tape.constant(t(&[2, 3], &[101.0, 102.0, 103.0, 95.0, 100.0, 105.0]));
        let a = tape.softmax_rows(x).unwrap();
        let b = tape.softmax_rows(shifted).unwrap();
        for r in 0..2 {
            let s: f64 = tape.value(a).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        for (p, q) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_map_gradient_is_input_broadcast() {
        // loss = sum(W·x): dW[i][j] = x[j]
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::filled(&[2, 3], 0.1)).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let x = tape.constant(t(&[3, 1], &[1.0, -2.0, 3.0]));
        let y = tape.matmul(wv, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.param(w).unwrap().data(), &[1.0, -2.0, 3.0, 1.0, -2.0, 3.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::filled(&[2, 2], 0.3)).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let zero = tape.scale(wv, 0.0);
        let loss = tape.sum(zero);
        let g = tape.backward(loss).unwrap();
        assert!(g.param(w).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(2.0));
        let y = tape.scale(x, 3.0);
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Tape(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[1, 2], &[1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn reused_parameter_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0)).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, w);
        let b = tape.param(&store, w);
        let y = tape.mul(a, b).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.param(w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sparse_matmul_equals_dense() {
        use super::super::SparseVector;
        let rows = [
            SparseVector::new(3, vec![(0, 0.5), (2, -1.0)]).unwrap(),
            SparseVector::new(3, vec![(1, 2.0)]).unwrap(),
        ];
        let csr = CsrMatrix::from_rows(3, rows.iter()).unwrap();
        let mut store = ParamStore::new();
        let w = store
            .add("w", t(&[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]))
            .unwrap();

        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let ys = tape.sparse_matmul(&csr, wv).unwrap();
        let dense = tape.constant(csr.to_dense());
        let yd = tape.matmul(dense, wv).unwrap();
        assert_eq!(tape.value(ys).data(), tape.value(yd).data());

        let ls = tape.sum(ys);
        let gs = tape.backward(ls).unwrap();
        let mut tape2 = Tape::new();
        let wv2 = tape2.param(&store, w);
        let dense = tape2.constant(csr.to_dense());
        let yd = tape2.matmul(dense, wv2).unwrap();
        let ld = tape2.sum(yd);
        let gd = tape2.backward(ld).unwrap();
        assert_eq!(gs.param(w).unwrap().data(), gd.param(w).unwrap().data());
    }

    #[test]
    fn concat_and_slices_round_trip() {
        let mut tape = Tape::new();
        let a = tape.variable(t(&[2, 1], &[1.0, 2.0]));
        let b = tape.variable(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let r = tape.concat(&[c, c], 0).unwrap();
        assert_eq!(tape.value(r).shape(), &[4, 3]);
        let s = tape.slice_cols(c, 1, 3).unwrap();
        assert_eq!(tape.value(s).data(), tape.value(b).data());
        let row = tape.slice_rows(c, 1, 2).unwrap();
        assert_eq!(tape.value(row).data(), &[2.0, 5.0, 6.0]);
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let mut tape = Tape::new();
        let table = tape.variable(Tensor::zeros(&[3, 2]));
        assert!(tape.embedding(table, &[0, 3]).is_err());
        let e = tape.embedding(table, &[2, 2, 0]).unwrap();
        let s = tape.sum(e);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(table).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
