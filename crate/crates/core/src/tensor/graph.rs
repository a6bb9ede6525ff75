//! Reverse-mode tape. One `Graph` records one forward pass; `backward`
//! consumes it. Parameters enter as leaves each pass, so there is no graph
//! reuse to reason about.

// index loops mirror the math; iterator rewrites of the kernels read worse
#![allow(clippy::needless_range_loop)]

use alloc::vec;
use alloc::vec::Vec;

use super::{matmul_raw, transpose_raw, Tensor, TensorError, TensorResult};
use crate::mathx;

/// Handle to a node on one graph. Only valid for the graph that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    /// Matrix plus a broadcast row vector (bias).
    AddRow {
        a: usize,
        row: usize,
    },
    Scale {
        x: usize,
        c: f64,
    },
    Transpose {
        x: usize,
    },
    Reshape {
        x: usize,
    },
    Gelu {
        x: usize,
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        // per-row statistics saved for the backward rule
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    /// Rows of `table` selected by constant ids.
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    ColSlice {
        x: usize,
        start: usize,
        width: usize,
    },
    ColConcat {
        parts: Vec<usize>,
    },
    Sum {
        x: usize,
    },
    /// Elementwise product with a constant buffer (dropout masks).
    MulConst {
        x: usize,
        mask: Vec<f64>,
    },
    /// Elementwise sum with a constant buffer (attention mask bias).
    AddConst {
        x: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The recorded forward pass: nodes in topological order.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            check_finite: false,
        }
    }

    /// NaN/Inf debug mode: every op output is validated. Off by default.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the loss w.r.t. `v`, populated by `backward`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> TensorResult<Var> {
        if self.check_finite {
            value.validate_finite(op_name(&op))?;
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
            .expect("leaf insertion cannot fail")
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![m, n], data)?, Op::MatMul { a: a.0, b: b.0 }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data)?, Op::Add { a: a.0, b: b.0 }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data)?, Op::Mul { a: a.0, b: b.0 }, rg)
    }

    /// `[r×c]` matrix plus a length-`c` bias row.
    pub fn add_row(&mut self, a: Var, row: Var) -> TensorResult<Var> {
        let (sa, sr) = (self.value(a).shape(), self.value(row).shape());
        if sa.len() != 2 || sr.len() != 1 || sa[1] != sr[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: sa.to_vec(),
                right: sr.to_vec(),
            });
        }
        let (r, c) = (sa[0], sa[1]);
        let mut data = self.value(a).data().to_vec();
        let bias = self.value(row).data();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += bias[j];
            }
        }
        let rg = self.needs(a) || self.needs(row);
        self.push(
            Tensor::new(vec![r, c], data)?,
            Op::AddRow { a: a.0, row: row.0 },
            rg,
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> TensorResult<Var> {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.needs(x);
        self.push(Tensor::new(shape, data)?, Op::Scale { x: x.0, c }, rg)
    }

    pub fn transpose(&mut self, x: Var) -> TensorResult<Var> {
        let s = self.value(x).shape();
        if s.len() != 2 {
            return Err(TensorError::InvalidAxis {
                axis: 1,
                rank: s.len(),
            });
        }
        let (r, c) = (s[0], s[1]);
        let data = transpose_raw(self.value(x).data(), r, c);
        let rg = self.needs(x);
        self.push(Tensor::new(vec![c, r], data)?, Op::Transpose { x: x.0 }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> TensorResult<Var> {
        let expected: usize = shape.iter().product();
        if expected != self.value(x).numel() {
            return Err(TensorError::DataLength {
                expected,
                got: self.value(x).numel(),
            });
        }
        let data = self.value(x).data().to_vec();
        let rg = self.needs(x);
        self.push(Tensor::new(shape, data)?, Op::Reshape { x: x.0 }, rg)
    }

    /// Exact-erf GELU: `x · Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> TensorResult<Var> {
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v * mathx::norm_cdf(v))
            .collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.needs(x);
        self.push(Tensor::new(shape, data)?, Op::Gelu { x: x.0 }, rg)
    }

    /// Max-subtracted softmax along `axis`; each slice sums to one.
    pub fn softmax(&mut self, x: Var, axis: usize) -> TensorResult<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        let lane = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * lane * inner + i;
                let mut max = f64::NEG_INFINITY;
                for l in 0..lane {
                    max = max.max(data[base + l * inner]);
                }
                let mut sum = 0.0;
                for l in 0..lane {
                    let e = mathx::exp(data[base + l * inner] - max);
                    data[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..lane {
                    data[base + l * inner] /= sum;
                }
            }
        }
        let rg = self.needs(x);
        self.push(Tensor::new(shape, data)?, Op::Softmax { x: x.0, axis }, rg)
    }

    /// Normalize the last axis to zero mean / unit variance, then apply the
    /// affine `gain`/`bias` pair.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> TensorResult<Var> {
        let shape = self.value(x).shape().to_vec();
        let last = *shape.last().ok_or(TensorError::EmptyAxis { op: "layer_norm" })?;
        if last == 0 {
            return Err(TensorError::EmptyAxis { op: "layer_norm" });
        }
        for (name, v) in [("gain", gain), ("bias", bias)] {
            let s = self.value(v).shape();
            if s != [last] {
                let _ = name;
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    left: shape.clone(),
                    right: s.to_vec(),
                });
            }
        }
        let rows = self.value(x).numel() / last;
        let mut data = vec![0.0; rows * last];
        let mut means = vec![0.0; rows];
        let mut inv_stds = vec![0.0; rows];
        {
            let xs = self.value(x).data();
            let g = self.value(gain).data();
            let b = self.value(bias).data();
            for r in 0..rows {
                let row = &xs[r * last..(r + 1) * last];
                let mean = row.iter().sum::<f64>() / last as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / last as f64;
                let inv_std = 1.0 / mathx::sqrt(var + eps);
                means[r] = mean;
                inv_stds[r] = inv_std;
                for j in 0..last {
                    data[r * last + j] = (row[j] - mean) * inv_std * g[j] + b[j];
                }
            }
        }
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            Tensor::new(shape, data)?,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                mean: means,
                inv_std: inv_stds,
            },
            rg,
        )
    }

    /// Mean over rows of `−log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> TensorResult<Var> {
        let s = self.value(logits).shape();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: s.to_vec(),
                right: vec![targets.len()],
            });
        }
        let (n, c) = (s[0], s[1]);
        for &t in targets {
            if t >= c {
                return Err(TensorError::TargetOutOfRange { index: t, classes: c });
            }
        }
        let xs = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &xs[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = mathx::exp(row[j] - max);
                probs[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                probs[i * c + j] /= sum;
            }
            loss += mathx::ln(sum) + max - row[targets[i]];
        }
        loss /= n as f64;
        let rg = self.needs(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Select rows of a `[V×E]` table by constant ids.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> TensorResult<Var> {
        let s = self.value(table).shape();
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "gather",
                left: s.to_vec(),
                right: vec![ids.len()],
            });
        }
        let (v, e) = (s[0], s[1]);
        for &id in ids {
            if id >= v {
                return Err(TensorError::IdOutOfRange { id, table: v });
            }
        }
        let xs = self.value(table).data();
        let mut data = vec![0.0; ids.len() * e];
        for (r, &id) in ids.iter().enumerate() {
            data[r * e..(r + 1) * e].copy_from_slice(&xs[id * e..(id + 1) * e]);
        }
        let rg = self.needs(table);
        self.push(
            Tensor::new(vec![ids.len(), e], data)?,
            Op::Gather {
                table: table.0,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Columns `start..start+width` of a rank-2 tensor.
    pub fn col_slice(&mut self, x: Var, start: usize, width: usize) -> TensorResult<Var> {
        let s = self.value(x).shape();
        if s.len() != 2 || start + width > s[1] {
            return Err(TensorError::ShapeMismatch {
                op: "col_slice",
                left: s.to_vec(),
                right: vec![start, width],
            });
        }
        let (r, c) = (s[0], s[1]);
        let xs = self.value(x).data();
        let mut data = vec![0.0; r * width];
        for i in 0..r {
            data[i * width..(i + 1) * width]
                .copy_from_slice(&xs[i * c + start..i * c + start + width]);
        }
        let rg = self.needs(x);
        self.push(
            Tensor::new(vec![r, width], data)?,
            Op::ColSlice {
                x: x.0,
                start,
                width,
            },
            rg,
        )
    }

    /// Concatenate rank-2 tensors with equal row counts along columns.
    pub fn col_concat(&mut self, parts: &[Var]) -> TensorResult<Var> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument(
                "col_concat needs at least one part".into(),
            ));
        }
        let rows = self.value(parts[0]).shape()[0];
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "col_concat",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: s.to_vec(),
                });
            }
            total += s[1];
        }
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let w = self.value(p).shape()[1];
            let xs = self.value(p).data();
            for i in 0..rows {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&xs[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::ColConcat {
                parts: parts.iter().map(|p| p.0).collect(),
            },
            rg,
        )
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, x: Var) -> TensorResult<Var> {
        let total: f64 = self.value(x).data().iter().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum { x: x.0 }, rg)
    }

    /// Elementwise product with a constant buffer (dropout masks; no gradient
    /// flows into the mask).
    pub fn mul_const(&mut self, x: Var, mask: &[f64]) -> TensorResult<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(TensorError::DataLength {
                expected: self.value(x).numel(),
                got: mask.len(),
            });
        }
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .zip(mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.needs(x);
        self.push(
            Tensor::new(shape, data)?,
            Op::MulConst {
                x: x.0,
                mask: mask.to_vec(),
            },
            rg,
        )
    }

    /// Elementwise sum with a constant buffer (additive attention mask).
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> TensorResult<Var> {
        if c.len() != self.value(x).numel() {
            return Err(TensorError::DataLength {
                expected: self.value(x).numel(),
                got: c.len(),
            });
        }
        let data: Vec<f64> = self.value(x).data().iter().zip(c).map(|(v, a)| v + a).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.needs(x);
        self.push(Tensor::new(shape, data)?, Op::AddConst { x: x.0 }, rg)
    }

    /// Populate gradient buffers for every recorded node that requires them.
    /// Consumes the tape: a second call without a new forward pass errors.
    pub fn backward(&mut self, loss: Var) -> TensorResult<()> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        self.consumed = true;
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gout) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gout);
            self.grads[idx] = Some(gout);
        }
        Ok(())
    }

    fn accumulate(&mut self, node: usize, delta: &[f64]) {
        if !self.nodes[node].requires_grad {
            return;
        }
        let slot = self.grads[node]
            .get_or_insert_with(|| vec![0.0; self.nodes[node].value.numel()]);
        for (g, d) in slot.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn propagate(&mut self, idx: usize, gout: &[f64]) {
        // Ops store raw indices; reborrow values as needed per rule.
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let sa = self.nodes[a].value.shape().to_vec();
                let sb = self.nodes[b].value.shape().to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let bt = transpose_raw(self.nodes[b].value.data(), k, n);
                let da = matmul_raw(gout, &bt, m, n, k);
                let at = transpose_raw(self.nodes[a].value.data(), m, k);
                let db = matmul_raw(&at, gout, k, m, n);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, gout);
                self.accumulate(b, gout);
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let da: Vec<f64> = gout
                    .iter()
                    .zip(self.nodes[b].value.data())
                    .map(|(g, v)| g * v)
                    .collect();
                let db: Vec<f64> = gout
                    .iter()
                    .zip(self.nodes[a].value.data())
                    .map(|(g, v)| g * v)
                    .collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::AddRow { a, row } => {
                let (a, row) = (*a, *row);
                let c = self.nodes[row].value.numel();
                let r = self.nodes[a].value.numel() / c;
                let mut drow = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        drow[j] += gout[i * c + j];
                    }
                }
                self.accumulate(a, gout);
                self.accumulate(row, &drow);
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let dx: Vec<f64> = gout.iter().map(|g| g * c).collect();
                self.accumulate(x, &dx);
            }
            Op::Transpose { x } => {
                let x = *x;
                let s = self.nodes[idx].value.shape().to_vec();
                let dx = transpose_raw(gout, s[0], s[1]);
                self.accumulate(x, &dx);
            }
            Op::Reshape { x } => {
                let x = *x;
                self.accumulate(x, gout);
            }
            Op::Gelu { x } => {
                let x = *x;
                const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
                let dx: Vec<f64> = self.nodes[x]
                    .value
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&v, g)| {
                        let pdf = INV_SQRT_2PI * mathx::exp(-0.5 * v * v);
                        g * (mathx::norm_cdf(v) + v * pdf)
                    })
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::Softmax { x, axis } => {
                let (x, axis) = (*x, *axis);
                let shape = self.nodes[idx].value.shape().to_vec();
                let lane = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..axis].iter().product();
                let y = self.nodes[idx].value.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * lane * inner + i;
                        let mut dot = 0.0;
                        for l in 0..lane {
                            let p = base + l * inner;
                            dot += gout[p] * y[p];
                        }
                        for l in 0..lane {
                            let p = base + l * inner;
                            dx[p] = y[p] * (gout[p] - dot);
                        }
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                inv_std,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let mean = mean.clone();
                let inv_std = inv_std.clone();
                let last = self.nodes[gain].value.numel();
                let rows = self.nodes[x].value.numel() / last;
                let xs = self.nodes[x].value.data().to_vec();
                let g = self.nodes[gain].value.data().to_vec();

                let mut dx = vec![0.0; rows * last];
                let mut dgain = vec![0.0; last];
                let mut dbias = vec![0.0; last];
                for r in 0..rows {
                    let istd = inv_std[r];
                    let m = mean[r];
                    let mut sum_dyg = 0.0;
                    let mut sum_dyg_xhat = 0.0;
                    for j in 0..last {
                        let p = r * last + j;
                        let xhat = (xs[p] - m) * istd;
                        let dyg = gout[p] * g[j];
                        sum_dyg += dyg;
                        sum_dyg_xhat += dyg * xhat;
                        dgain[j] += gout[p] * xhat;
                        dbias[j] += gout[p];
                    }
                    let n = last as f64;
                    for j in 0..last {
                        let p = r * last + j;
                        let xhat = (xs[p] - m) * istd;
                        let dyg = gout[p] * g[j];
                        dx[p] = istd * (dyg - sum_dyg / n - xhat * sum_dyg_xhat / n);
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gain, &dgain);
                self.accumulate(bias, &dbias);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let logits = *logits;
                let targets = targets.clone();
                let n = targets.len();
                let c = probs.len() / n;
                let g = gout[0];
                let mut dl = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    dl[i * c + t] -= 1.0;
                }
                for v in dl.iter_mut() {
                    *v *= g / n as f64;
                }
                self.accumulate(logits, &dl);
            }
            Op::Gather { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                let e = self.nodes[idx].value.shape()[1];
                let mut dt = vec![0.0; self.nodes[table].value.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..e {
                        dt[id * e + j] += gout[r * e + j];
                    }
                }
                self.accumulate(table, &dt);
            }
            Op::ColSlice { x, start, width } => {
                let (x, start, width) = (*x, *start, *width);
                let c = self.nodes[x].value.shape()[1];
                let r = self.nodes[x].value.shape()[0];
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..width {
                        dx[i * c + start + j] = gout[i * width + j];
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::ColConcat { parts } => {
                let parts = parts.clone();
                let total = self.nodes[idx].value.shape()[1];
                let rows = self.nodes[idx].value.shape()[0];
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p].value.shape()[1];
                    let mut dp = vec![0.0; rows * w];
                    for i in 0..rows {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&gout[i * total + offset..i * total + offset + w]);
                    }
                    self.accumulate(p, &dp);
                    offset += w;
                }
            }
            Op::Sum { x } => {
                let x = *x;
                let dx = vec![gout[0]; self.nodes[x].value.numel()];
                self.accumulate(x, &dx);
            }
            Op::MulConst { x, mask } => {
                let x = *x;
                let dx: Vec<f64> = gout.iter().zip(mask.clone()).map(|(g, m)| g * m).collect();
                self.accumulate(x, &dx);
            }
            Op::AddConst { x } => {
                let x = *x;
                self.accumulate(x, gout);
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "mul",
        Op::AddRow { .. } => "add_row",
        Op::Scale { .. } => "scale",
        Op::Transpose { .. } => "transpose",
        Op::Reshape { .. } => "reshape",
        Op::Gelu { .. } => "gelu",
        Op::Softmax { .. } => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::Gather { .. } => "gather",
        Op::ColSlice { .. } => "col_slice",
        Op::ColConcat { .. } => "col_concat",
        Op::Sum { .. } => "sum",
        Op::MulConst { .. } => "mul_const",
        Op::AddConst { .. } => "add_const",
    }
}

/// Compare the tape's gradient of `f` at `x` against central differences,
/// coordinate by coordinate. Returns the max relative error
/// `|a−n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> TensorResult<f64>
where
    F: Fn(&mut Graph, Var) -> TensorResult<Var>,
{
    let mut g = Graph::new();
    let vx = g.leaf(x.clone(), true);
    let loss = f(&mut g, vx)?;
    if !g.value(loss).is_scalar() {
        return Err(TensorError::NonScalarLoss {
            shape: g.value(loss).shape().to_vec(),
        });
    }
    g.backward(loss)?;
    let analytic = g
        .grad(vx)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |probe: &Tensor| -> TensorResult<f64> {
        let mut g = Graph::new();
        let vx = g.leaf(probe.clone(), false);
        let loss = f(&mut g, vx)?;
        Ok(g.value(loss).item())
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        let a = analytic[i];
        let err = mathx::abs(a - numeric) / mathx::abs(a).max(mathx::abs(numeric)).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
