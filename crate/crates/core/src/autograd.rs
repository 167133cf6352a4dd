//! Minimal reverse-mode gradient engine.
//!
//! A [`Graph`] is a tape of nodes built single-threaded per training step.
//! The operation set is deliberately closed: affine maps, ReLU, row
//! normalization, row cosine, matrix product, elementwise add/multiply/scale,
//! mean reduction, softmax cross-entropy over rows, convex blends, and the
//! spectral augmentation with its sampled statistics held constant. A value
//! produced outside this set can enter as a leaf (constant) or, if it must be
//! flagged as trainable-path, as an external node whose backward visit fails
//! loudly instead of being treated as a silent constant.
//!
//! Gradients of parameters with no path to the loss are exact zeros.

use crate::error::{Error, Result};
use crate::spectral::{self, FbaCache, FbaDraw, FbaRowCache};
use crate::tensor::{dot, norm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    External(String),
    /// `x w^T + b` with `x: BxI`, `w: KxI`, `b: [K]`.
    Affine,
    Relu,
    L2NormRows,
    CosineRows,
    Matmul,
    Add,
    Mul,
    Scale(f64),
    Mean,
    SoftmaxXentRows(Vec<usize>),
    /// `a x + (1-a) y`.
    Blend(f64),
    Fba { draw: FbaDraw, cache: FbaCache },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// Parameter gradients returned by [`Graph::backward`].
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    /// Gradient of a registered parameter; materialized as zeros when the
    /// loss does not depend on it.
    pub fn param_grad(&self, id: NodeId) -> &Tensor {
        self.get(id)
            .expect("param_grad: node is not a registered parameter of this backward pass")
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let requires_grad = match op {
            Op::Leaf => false,
            Op::Param | Op::External(_) => true,
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant input; gradients never flow into it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    /// A trainable parameter; its gradient is always materialized.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        let id = self.push(Op::Param, vec![], value);
        self.params.push(id);
        id
    }

    /// A value computed outside the supported operation set but marked as
    /// sitting on a trainable path. Differentiating through it is an error;
    /// this is the loud alternative to silently treating it as constant.
    pub fn external(&mut self, label: impl Into<String>, value: Tensor) -> NodeId {
        self.push(Op::External(label.into()), vec![], value)
    }

    /// Stop-gradient: re-enters a node's value as a fresh constant leaf.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let value = self.nodes[id.0].value.clone();
        self.leaf(value)
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, inner) = self.value(x).dims2()?;
        let (out_dim, inner_w) = self.value(w).dims2()?;
        if inner != inner_w {
            return Err(Error::invalid(format!(
                "affine: input width {inner} does not match weight width {inner_w}"
            )));
        }
        let bias = self.value(b);
        if bias.shape() != [out_dim] {
            return Err(Error::invalid(format!(
                "affine: bias shape {:?}, expected [{out_dim}]",
                bias.shape()
            )));
        }
        let mut out = vec![0.0; rows * out_dim];
        let xv = self.value(x);
        let wv = self.value(w);
        for i in 0..rows {
            let xr = xv.row(i);
            for k in 0..out_dim {
                out[i * out_dim + k] = dot(xr, wv.row(k)) + bias.data()[k];
            }
        }
        let value = Tensor::new(vec![rows, out_dim], out)?;
        Ok(self.push(Op::Affine, vec![x, w, b], value))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = Tensor::new(
            self.value(x).shape().to_vec(),
            self.value(x).data().iter().map(|v| v.max(0.0)).collect(),
        )?;
        Ok(self.push(Op::Relu, vec![x], value))
    }

    /// Normalizes each row to unit Euclidean norm; zero rows are an error.
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(x).dims2()?;
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let r = self.value(x).row(i);
            let n = norm(r);
            if n == 0.0 {
                return Err(Error::DegenerateVector(format!(
                    "l2_normalize_rows: row {i} has zero norm"
                )));
            }
            out.extend(r.iter().map(|v| v / n));
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(Op::L2NormRows, vec![x], value))
    }

    /// Row-wise cosine similarity of two equally shaped matrices -> `[B]`.
    pub fn cosine_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(a).dims2()?;
        if self.value(b).shape() != [rows, cols] {
            return Err(Error::invalid(format!(
                "cosine_rows: shapes {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            out.push(crate::tensor::cosine(
                self.value(a).row(i),
                self.value(b).row(i),
            )?);
        }
        let value = Tensor::new(vec![rows], out)?;
        Ok(self.push(Op::CosineRows, vec![a, b], value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::Matmul, vec![a, b], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add, vec![a, b], value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul, vec![a, b], value))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::invalid(format!("scale: non-finite factor {factor}")));
        }
        let value = self.value(x).scale(factor)?;
        Ok(self.push(Op::Scale(factor), vec![x], value))
    }

    /// Mean over all elements -> scalar.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::invalid("mean: empty tensor"));
        }
        let value = Tensor::scalar(self.value(x).data().iter().sum::<f64>() / n as f64);
        Ok(self.push(Op::Mean, vec![x], value))
    }

    /// Mean over rows of `logsumexp(row) - row[target]`, the softmax
    /// cross-entropy with one target index per row.
    pub fn softmax_xent_rows(&mut self, logits: NodeId, targets: Vec<usize>) -> Result<NodeId> {
        let (rows, cols) = self.value(logits).dims2()?;
        if targets.len() != rows {
            return Err(Error::invalid(format!(
                "softmax_xent_rows: {rows} rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::invalid(format!(
                "softmax_xent_rows: target {bad} out of range for {cols} columns"
            )));
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = self.value(logits).row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let value = Tensor::scalar(total / rows as f64);
        Ok(self.push(Op::SoftmaxXentRows(targets), vec![logits], value))
    }

    /// Convex blend `alpha * x + (1 - alpha) * y`.
    pub fn blend(&mut self, alpha: f64, x: NodeId, y: NodeId) -> Result<NodeId> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("blend: alpha {alpha} outside [0, 1]")));
        }
        let value = self
            .value(x)
            .scale(alpha)?
            .add(&self.value(y).scale(1.0 - alpha)?)?;
        Ok(self.push(Op::Blend(alpha), vec![x, y], value))
    }

    /// Spectral augmentation with a fixed draw. The sampled statistics are
    /// constants; the gradient still flows through the transform, the
    /// amplitude computation, and the per-sample normalization statistics.
    pub fn fba(&mut self, x: NodeId, draw: FbaDraw) -> Result<NodeId> {
        let (value, cache) = spectral::fba_apply(self.value(x), &draw)?;
        Ok(self.push(Op::Fba { draw, cache }, vec![x], value))
    }

    /// Reverse sweep from a scalar loss node. Returns gradients for every
    /// registered parameter (zeros when unreachable from the loss).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(grad) = slots[id].take() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Leaf => unreachable!("leaves never require gradients"),
                Op::Param => {
                    slots[id] = Some(grad);
                }
                Op::External(label) => {
                    return Err(Error::UnsupportedOp(format!(
                        "cannot differentiate through external value '{label}'"
                    )));
                }
                _ => {
                    let node = &self.nodes[id];
                    let input_grads = self.op_backward(node, &grad)?;
                    debug_assert_eq!(input_grads.len(), node.inputs.len());
                    for (input, delta) in node.inputs.iter().zip(input_grads) {
                        if !self.nodes[input.0].requires_grad {
                            continue;
                        }
                        match &mut slots[input.0] {
                            Some(existing) => *existing = existing.add(&delta)?,
                            empty => *empty = Some(delta),
                        }
                    }
                }
            }
        }
        for &p in &self.params {
            if slots[p.0].is_none() {
                slots[p.0] = Some(Tensor::zeros(self.value(p).shape()));
            }
        }
        Ok(Gradients { slots })
    }

    fn op_backward(&self, node: &Node, grad: &Tensor) -> Result<Vec<Tensor>> {
        match &node.op {
            Op::Affine => {
                let x = self.value(node.inputs[0]);
                let w = self.value(node.inputs[1]);
                let dx = grad.matmul(w)?;
                let dw = grad.transposed()?.matmul(x)?;
                let (rows, out_dim) = grad.dims2()?;
                let mut db = vec![0.0; out_dim];
                for i in 0..rows {
                    for (k, slot) in db.iter_mut().enumerate() {
                        *slot += grad.row(i)[k];
                    }
                }
                Ok(vec![dx, dw, Tensor::new(vec![out_dim], db)?])
            }
            Op::Relu => {
                // Subgradient 0 at exactly zero input.
                let x = self.value(node.inputs[0]);
                let data = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                    .collect();
                Ok(vec![Tensor::new(x.shape().to_vec(), data)?])
            }
            Op::L2NormRows => {
                let x = self.value(node.inputs[0]);
                let y = &node.value;
                let (rows, cols) = x.dims2()?;
                let mut out = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    let n = norm(x.row(i));
                    let g = grad.row(i);
                    let yr = y.row(i);
                    let gy = dot(g, yr);
                    out.extend(
                        g.iter()
                            .zip(yr)
                            .map(|(&gv, &yv)| (gv - gy * yv) / n),
                    );
                }
                Ok(vec![Tensor::new(vec![rows, cols], out)?])
            }
            Op::CosineRows => {
                let a = self.value(node.inputs[0]);
                let b = self.value(node.inputs[1]);
                let (rows, cols) = a.dims2()?;
                let mut da = Vec::with_capacity(rows * cols);
                let mut db = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    let (ar, br) = (a.row(i), b.row(i));
                    let (na, nb) = (norm(ar), norm(br));
                    let c = node.value.data()[i];
                    let g = grad.data()[i];
                    for k in 0..cols {
                        da.push(g * (br[k] / (na * nb) - c * ar[k] / (na * na)));
                        db.push(g * (ar[k] / (na * nb) - c * br[k] / (nb * nb)));
                    }
                }
                Ok(vec![
                    Tensor::new(vec![rows, cols], da)?,
                    Tensor::new(vec![rows, cols], db)?,
                ])
            }
            Op::Matmul => {
                let a = self.value(node.inputs[0]);
                let b = self.value(node.inputs[1]);
                let da = grad.matmul(&b.transposed()?)?;
                let db = a.transposed()?.matmul(grad)?;
                Ok(vec![da, db])
            }
            Op::Add => Ok(vec![grad.clone(), grad.clone()]),
            Op::Mul => {
                let a = self.value(node.inputs[0]);
                let b = self.value(node.inputs[1]);
                Ok(vec![grad.mul(b)?, grad.mul(a)?])
            }
            Op::Scale(factor) => Ok(vec![grad.scale(*factor)?]),
            Op::Mean => {
                let x = self.value(node.inputs[0]);
                let g = grad.item()? / x.len() as f64;
                Ok(vec![Tensor::full(x.shape(), g)])
            }
            Op::SoftmaxXentRows(targets) => {
                let logits = self.value(node.inputs[0]);
                let (rows, cols) = logits.dims2()?;
                let g = grad.item()? / rows as f64;
                let mut dl = Vec::with_capacity(rows * cols);
                for (i, &t) in targets.iter().enumerate() {
                    let row = logits.row(i);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    for (j, &v) in row.iter().enumerate() {
                        let soft = (v - max).exp() / denom;
                        dl.push(g * (soft - if j == t { 1.0 } else { 0.0 }));
                    }
                }
                Ok(vec![Tensor::new(vec![rows, cols], dl)?])
            }
            Op::Blend(alpha) => Ok(vec![grad.scale(*alpha)?, grad.scale(1.0 - *alpha)?]),
            Op::Fba { draw, cache } => {
                let x = self.value(node.inputs[0]);
                let (rows, cols) = x.dims2()?;
                let mut out = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    out.extend(fba_row_vjp(grad.row(i), &cache.rows[i], draw, i, cols));
                }
                Ok(vec![Tensor::new(vec![rows, cols], out)?])
            }
            Op::Leaf | Op::Param | Op::External(_) => {
                unreachable!("source nodes have no op backward")
            }
        }
    }
}

/// Vector-Jacobian product of one augmented row.
///
/// With the drawn statistics `(mu_hat, sigma_hat)` fixed, the row map is
/// `x -> idft(ratio(amp(dft(x))) * dft(x))`; the gradient flows through the
/// transform, the amplitudes, and the per-sample normalization statistics
/// `mu(A), sigma(A)`. Identity rows short-circuit to the upstream gradient.
fn fba_row_vjp(
    upstream: &[f64],
    cache: &FbaRowCache,
    draw: &FbaDraw,
    row_index: usize,
    cols: usize,
) -> Vec<f64> {
    if cache.identity {
        return upstream.to_vec();
    }
    let k = cols as f64;
    // Gradient with respect to the perturbed spectrum: (1/K) * forward
    // transform of the upstream gradient.
    let zeros = vec![0.0; cols];
    let (pu, qu) = spectral::fft_forward_raw(upstream, &zeros);
    let p: Vec<f64> = pu.iter().map(|v| v / k).collect();
    let q: Vec<f64> = qu.iter().map(|v| v / k).collect();

    // Reconstruct the perturbed amplitudes from the cached statistics.
    let eps = spectral::AMP_EPSILON;
    let target: Vec<f64> = match draw {
        FbaDraw::Affine { mu_hat, sigma_hat } => {
            let denom = cache.sigma + eps;
            cache
                .amp
                .iter()
                .map(|&a| sigma_hat[row_index] * (a - cache.mu) / denom + mu_hat[row_index])
                .collect()
        }
        FbaDraw::Additive { noise } => cache
            .amp
            .iter()
            .zip(&noise[row_index])
            .map(|(&a, &n)| a + n)
            .collect(),
    };

    let mut d_re = vec![0.0; cols];
    let mut d_im = vec![0.0; cols];
    let mut d_amp = vec![0.0; cols];
    let mut d_target = vec![0.0; cols];
    for i in 0..cols {
        if cache.amp[i] == 0.0 {
            // Zero-amplitude bins wrote (target, 0) directly; the absolute
            // value is not differentiable there, subgradient 0 to the spectrum.
            d_target[i] = p[i];
            continue;
        }
        let ratio = target[i] / cache.amp[i];
        let g_ratio = p[i] * cache.xre[i] + q[i] * cache.xim[i];
        d_target[i] = g_ratio / cache.amp[i];
        d_re[i] = p[i] * ratio;
        d_im[i] = q[i] * ratio;
        d_amp[i] = -g_ratio * target[i] / (cache.amp[i] * cache.amp[i]);
    }

    // Chain from the perturbed amplitudes back to the raw amplitudes.
    match draw {
        FbaDraw::Affine { sigma_hat, .. } => {
            let denom = cache.sigma + eps;
            let c = sigma_hat[row_index] / denom;
            let mean_dt = d_target.iter().sum::<f64>() / k;
            let s: f64 = d_target
                .iter()
                .zip(&cache.amp)
                .map(|(&dt, &a)| dt * (a - cache.mu))
                .sum();
            let sigma_coeff = sigma_hat[row_index] * s / (denom * denom);
            for m in 0..cols {
                let d_sigma_d_a = if cache.sigma > 0.0 {
                    (cache.amp[m] - cache.mu) / (k * cache.sigma)
                } else {
                    0.0
                };
                d_amp[m] += c * (d_target[m] - mean_dt) - sigma_coeff * d_sigma_d_a;
            }
        }
        FbaDraw::Additive { .. } => {
            for m in 0..cols {
                d_amp[m] += d_target[m];
            }
        }
    }

    // Amplitude to spectrum, then spectrum back to the signal.
    for i in 0..cols {
        if cache.amp[i] > 0.0 {
            d_re[i] += d_amp[i] * cache.xre[i] / cache.amp[i];
            d_im[i] += d_amp[i] * cache.xim[i] / cache.amp[i];
        }
    }
    let (gx, _) = spectral::fft_inverse_raw(&d_re, &d_im);
    gx
}
