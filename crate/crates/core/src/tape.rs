//! Recording tape for reverse-mode differentiation.
//!
//! Operations append nodes that hold their output tensor and enough context
//! to replay the chain rule; node indices only ever point backwards, so the
//! tape order is already a topological order and the backward pass is one
//! reverse sweep that visits each node exactly once. Values that do not
//! feed the root keep a zero gradient. Every forward output and every
//! upstream gradient is checked for NaN/infinity and the offending
//! operation is named in the error.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::kernel::{self, KernelSpec, MmdEstimator};
use crate::ops::{self, BnBatchStats};
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Scale { a: ValueId, factor: f64 },
    Sum { a: ValueId },
    Mean { a: ValueId },
    Relu { a: ValueId },
    Flatten { a: ValueId },
    GatherRows { a: ValueId, indices: Vec<usize> },
    Dense { x: ValueId, w: ValueId, b: ValueId },
    Conv2d { x: ValueId, w: ValueId, dims: ops::ConvDims },
    MaxPool2d { x: ValueId, dims: ops::PoolDims },
    BatchNormTrain { x: ValueId, gamma: ValueId, beta: ValueId, eps: f64, stats: BnBatchStats },
    BatchNormEval {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    SoftmaxCrossEntropy { logits: ValueId, labels: Vec<usize> },
    Mmd2 { x: ValueId, y: ValueId, spec: KernelSpec, estimator: MmdEstimator },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Relu { .. } => "relu",
            Op::Flatten { .. } => "flatten",
            Op::GatherRows { .. } => "gather_rows",
            Op::Dense { .. } => "dense",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::BatchNormTrain { .. } => "batchnorm2d",
            Op::BatchNormEval { .. } => "batchnorm2d",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Mmd2 { .. } => "mmd2",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradient map returned by [`Tape::backward`], keyed by the requested ids.
pub type GradMap = BTreeMap<ValueId, Tensor>;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<ValueId> {
        value.check_finite(op.name())?;
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { op, value });
        Ok(id)
    }

    /// Record an input value (parameter or data).
    pub fn leaf(&mut self, value: Tensor) -> Result<ValueId> {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.zip("add", a, b, |x, y| x + y)?;
        self.push(Op::Add { a, b }, out)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.zip("sub", a, b, |x, y| x - y)?;
        self.push(Op::Sub { a, b }, out)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.zip("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul { a, b }, out)
    }

    pub fn scale(&mut self, a: ValueId, factor: f64) -> Result<ValueId> {
        let v = self.value(a);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| x * factor).collect())?;
        self.push(Op::Scale { a, factor }, out)
    }

    pub fn sum(&mut self, a: ValueId) -> Result<ValueId> {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum { a }, Tensor::scalar(total))
    }

    pub fn mean(&mut self, a: ValueId) -> Result<ValueId> {
        let v = self.value(a);
        let total: f64 = v.data().iter().sum();
        let mean = total / v.numel() as f64;
        self.push(Op::Mean { a }, Tensor::scalar(mean))
    }

    pub fn relu(&mut self, a: ValueId) -> Result<ValueId> {
        let v = self.value(a);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
        )?;
        self.push(Op::Relu { a }, out)
    }

    /// NCHW -> N x (C*H*W); data is already contiguous in that order.
    pub fn flatten(&mut self, a: ValueId) -> Result<ValueId> {
        let v = self.value(a);
        let (n, c, h, w) = v.dims4("flatten")?;
        let out = Tensor::new(vec![n, c * h * w], v.data().to_vec())?;
        self.push(Op::Flatten { a }, out)
    }

    /// Select rows of a rank-2 tensor by index; duplicates are allowed and
    /// accumulate gradient.
    pub fn gather_rows(&mut self, a: ValueId, indices: &[usize]) -> Result<ValueId> {
        let v = self.value(a);
        let (rows, cols) = v.dims2("gather_rows")?;
        if indices.is_empty() {
            return Err(CoreError::invalid("gather_rows", "empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(CoreError::invalid(
                "gather_rows",
                format!("row index {bad} out of range for {rows} rows"),
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(v.row(i));
        }
        let out = Tensor::new(vec![indices.len(), cols], data)?;
        self.push(Op::GatherRows { a, indices: indices.to_vec() }, out)
    }

    /// Affine layer `x W + b`.
    pub fn dense(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (n, i) = self.value(x).dims2("dense")?;
        let (wi, o) = self.value(w).dims2("dense")?;
        if wi != i {
            return Err(CoreError::shape(
                "dense",
                format!("input width {i} does not match weight rows {wi}"),
            ));
        }
        if self.value(b).numel() != o {
            return Err(CoreError::shape(
                "dense",
                format!("bias length {} does not match {o} outputs", self.value(b).numel()),
            ));
        }
        let out = ops::dense_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            n,
            i,
            o,
        );
        self.push(Op::Dense { x, w, b }, Tensor::new(vec![n, o], out)?)
    }

    /// 2-D cross-correlation with zero padding; weights are O x I x K x K.
    pub fn conv2d(&mut self, x: ValueId, w: ValueId, stride: usize, padding: usize) -> Result<ValueId> {
        let dims = ops::conv2d_dims(self.value(x).shape(), self.value(w).shape(), stride, padding)?;
        let out = ops::conv2d_forward(self.value(x).data(), self.value(w).data(), &dims);
        let shape = vec![dims.batch, dims.c_out, dims.out_h, dims.out_w];
        self.push(Op::Conv2d { x, w, dims }, Tensor::new(shape, out)?)
    }

    pub fn maxpool2d(&mut self, x: ValueId, window: usize, stride: usize) -> Result<ValueId> {
        let dims = ops::maxpool_dims(self.value(x).shape(), window, stride)?;
        let out = ops::maxpool_forward(self.value(x).data(), &dims);
        let shape = vec![dims.batch, dims.channels, dims.out_h, dims.out_w];
        self.push(Op::MaxPool2d { x, dims }, Tensor::new(shape, out)?)
    }

    /// Training-mode batch normalization; returns the output id and the
    /// batch statistics so the caller can fold them into running estimates.
    pub fn batchnorm_train(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    ) -> Result<(ValueId, BnBatchStats)> {
        let shape = self.value(x).dims4("batchnorm2d")?;
        self.check_bn_params(shape.1, gamma, beta)?;
        let (out, stats) = ops::batchnorm_train_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            shape,
            eps,
        )?;
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let id = self.push(
            Op::BatchNormTrain { x, gamma, beta, eps, stats: stats.clone() },
            value,
        )?;
        Ok((id, stats))
    }

    /// Eval-mode batch normalization using fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<ValueId> {
        let shape = self.value(x).dims4("batchnorm2d")?;
        self.check_bn_params(shape.1, gamma, beta)?;
        if running_mean.len() != shape.1 || running_var.len() != shape.1 {
            return Err(CoreError::shape("batchnorm2d", "running stats do not match channels"));
        }
        let out = ops::batchnorm_eval_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean,
            running_var,
            shape,
            eps,
        );
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        self.push(
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                eps,
                running_mean: running_mean.to_vec(),
                running_var: running_var.to_vec(),
            },
            value,
        )
    }

    fn check_bn_params(&self, channels: usize, gamma: ValueId, beta: ValueId) -> Result<()> {
        if self.value(gamma).numel() != channels || self.value(beta).numel() != channels {
            return Err(CoreError::shape(
                "batchnorm2d",
                format!("gamma/beta must have {channels} entries"),
            ));
        }
        Ok(())
    }

    /// Mean over the batch of the per-row negative log softmax probability
    /// of the true class.
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let (n, c) = self.value(logits).dims2("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(CoreError::shape(
                "softmax_cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        let loss = ops::softmax_ce_forward(self.value(logits).data(), labels, n, c)?;
        self.push(
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec() },
            Tensor::scalar(loss),
        )
    }

    /// Squared MMD between the rows of two rank-2 values under the mixture
    /// kernel; differentiable with respect to both sides.
    pub fn mmd2(
        &mut self,
        x: ValueId,
        y: ValueId,
        spec: &KernelSpec,
        estimator: MmdEstimator,
    ) -> Result<ValueId> {
        let (m, dx) = self.value(x).dims2("mmd2")?;
        let (n, dy) = self.value(y).dims2("mmd2")?;
        if dx != dy {
            return Err(CoreError::shape("mmd2", format!("dimension mismatch: {dx} vs {dy}")));
        }
        let value = kernel::mmd2_value(
            self.value(x).data(),
            m,
            self.value(y).data(),
            n,
            dx,
            spec,
            estimator,
        )?;
        self.push(
            Op::Mmd2 { x, y, spec: spec.clone(), estimator },
            Tensor::scalar(value),
        )
    }

    fn zip(
        &self,
        op: &'static str,
        a: ValueId,
        b: ValueId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(CoreError::shape(
                op,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        Tensor::new(
            va.shape().to_vec(),
            va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect(),
        )
    }

    /// Reverse sweep from a scalar root. Returns the gradient of the root
    /// with respect to each requested value; values that never fed the root
    /// get a zero gradient of their own shape.
    pub fn backward(&self, root: ValueId, wanted: &[ValueId]) -> Result<GradMap> {
        if !self.value(root).is_scalar() {
            return Err(CoreError::invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if g.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite { op: node.op.name() });
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, self.numel(*a), &g);
                    accumulate(&mut grads, *b, self.numel(*b), &g);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, self.numel(*a), &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *b, self.numel(*b), &neg);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> =
                        g.iter().zip(self.value(*b).data()).map(|(gv, bv)| gv * bv).collect();
                    let db: Vec<f64> =
                        g.iter().zip(self.value(*a).data()).map(|(gv, av)| gv * av).collect();
                    accumulate(&mut grads, *a, self.numel(*a), &da);
                    accumulate(&mut grads, *b, self.numel(*b), &db);
                }
                Op::Scale { a, factor } => {
                    let da: Vec<f64> = g.iter().map(|v| v * factor).collect();
                    accumulate(&mut grads, *a, self.numel(*a), &da);
                }
                Op::Sum { a } => {
                    let da = vec![g[0]; self.numel(*a)];
                    accumulate(&mut grads, *a, self.numel(*a), &da);
                }
                Op::Mean { a } => {
                    let n = self.numel(*a);
                    let da = vec![g[0] / n as f64; n];
                    accumulate(&mut grads, *a, n, &da);
                }
                Op::Relu { a } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, self.numel(*a), &da);
                }
                Op::Flatten { a } => {
                    accumulate(&mut grads, *a, self.numel(*a), &g);
                }
                Op::GatherRows { a, indices } => {
                    let cols = self.value(*a).shape()[1];
                    let mut da = vec![0.0; self.numel(*a)];
                    for (out_row, &src_row) in indices.iter().enumerate() {
                        for k in 0..cols {
                            da[src_row * cols + k] += g[out_row * cols + k];
                        }
                    }
                    accumulate(&mut grads, *a, self.numel(*a), &da);
                }
                Op::Dense { x, w, b } => {
                    let (n, i) = self.value(*x).dims2("dense")?;
                    let o = self.value(*b).numel();
                    let (dx, dw, db) = ops::dense_backward(
                        self.value(*x).data(),
                        self.value(*w).data(),
                        n,
                        i,
                        o,
                        &g,
                    );
                    accumulate(&mut grads, *x, self.numel(*x), &dx);
                    accumulate(&mut grads, *w, self.numel(*w), &dw);
                    accumulate(&mut grads, *b, self.numel(*b), &db);
                }
                Op::Conv2d { x, w, dims } => {
                    let (dx, dw) = ops::conv2d_backward(
                        self.value(*x).data(),
                        self.value(*w).data(),
                        dims,
                        &g,
                    );
                    accumulate(&mut grads, *x, self.numel(*x), &dx);
                    accumulate(&mut grads, *w, self.numel(*w), &dw);
                }
                Op::MaxPool2d { x, dims } => {
                    let dx = ops::maxpool_backward(self.value(*x).data(), dims, &g);
                    accumulate(&mut grads, *x, self.numel(*x), &dx);
                }
                Op::BatchNormTrain { x, gamma, beta, eps, stats } => {
                    let shape = self.value(*x).dims4("batchnorm2d")?;
                    let (dx, dgamma, dbeta) = ops::batchnorm_train_backward(
                        self.value(*x).data(),
                        self.value(*gamma).data(),
                        stats,
                        shape,
                        *eps,
                        &g,
                    );
                    accumulate(&mut grads, *x, self.numel(*x), &dx);
                    accumulate(&mut grads, *gamma, self.numel(*gamma), &dgamma);
                    accumulate(&mut grads, *beta, self.numel(*beta), &dbeta);
                }
                Op::BatchNormEval { x, gamma, beta, eps, running_mean, running_var } => {
                    let shape = self.value(*x).dims4("batchnorm2d")?;
                    let (dx, dgamma, dbeta) = ops::batchnorm_eval_backward(
                        self.value(*x).data(),
                        self.value(*gamma).data(),
                        running_mean,
                        running_var,
                        shape,
                        *eps,
                        &g,
                    );
                    accumulate(&mut grads, *x, self.numel(*x), &dx);
                    accumulate(&mut grads, *gamma, self.numel(*gamma), &dgamma);
                    accumulate(&mut grads, *beta, self.numel(*beta), &dbeta);
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let (n, c) = self.value(*logits).dims2("softmax_cross_entropy")?;
                    let dlogits =
                        ops::softmax_ce_backward(self.value(*logits).data(), labels, n, c, g[0]);
                    accumulate(&mut grads, *logits, self.numel(*logits), &dlogits);
                }
                Op::Mmd2 { x, y, spec, estimator } => {
                    let (m, d) = self.value(*x).dims2("mmd2")?;
                    let (n, _) = self.value(*y).dims2("mmd2")?;
                    let (_, gx, gy) = kernel::mmd2_value_and_grads(
                        self.value(*x).data(),
                        m,
                        self.value(*y).data(),
                        n,
                        d,
                        spec,
                        *estimator,
                    )?;
                    let gx: Vec<f64> = gx.iter().map(|v| v * g[0]).collect();
                    let gy: Vec<f64> = gy.iter().map(|v| v * g[0]).collect();
                    accumulate(&mut grads, *x, self.numel(*x), &gx);
                    accumulate(&mut grads, *y, self.numel(*y), &gy);
                }
            }
        }

        let mut out = GradMap::new();
        for &id in wanted {
            let shape = self.value(id).shape().to_vec();
            let data = match grads[id.0].take() {
                Some(g) => g,
                None => vec![0.0; self.numel(id)],
            };
            let t = Tensor::new(shape, data)?;
            t.check_finite("backward")?;
            out.insert(id, t);
        }
        Ok(out)
    }

    fn numel(&self, id: ValueId) -> usize {
        self.nodes[id.0].value.numel()
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: ValueId, numel: usize, contribution: &[f64]) {
    let slot = grads[id.index()].get_or_insert_with(|| vec![0.0; numel]);
    for (acc, c) in slot.iter_mut().zip(contribution) {
        *acc += c;
    }
}

/// Record a computation and return the gradients of its scalar root with
/// respect to the given parameters.
pub fn record_and_backward(
    tape: &Tape,
    root: ValueId,
    params: &[ValueId],
) -> Result<GradMap> {
    tape.backward(root, params)
}
