//! A forward recording ("tape") over [`layer_forward`] kernels plus the
//! glue ops the networks need (concat, slicing, masking, gathers, losses).
//!
//! Nodes are appended in execution order, so the backward pass is a single
//! reverse sweep. Parameters enter as leaves keyed by name; a parameter used
//! at several steps (an LSTM unrolled over time) maps to one leaf and its
//! gradients accumulate there.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{arg, shape, Error, Result};
use crate::micrograd::layers::{layer_backward, layer_forward, LayerKind, PoolIndices, Saved};
use crate::micrograd::loss::{clamped_nll, seq_nll_with_grad};
use crate::micrograd::params::ParameterSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Layer {
        inputs: Vec<NodeId>,
        params: Vec<NodeId>,
        saved: Saved,
    },
    Concat(Vec<NodeId>),
    Slice {
        input: NodeId,
        start: usize,
    },
    Reshape(NodeId),
    /// `mask (H, W)` broadcast over the channels of `image (C, H, W)`.
    MaskMul {
        mask: NodeId,
        image: NodeId,
    },
    Gather {
        input: NodeId,
        index: Arc<Vec<usize>>,
    },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    Mean(Vec<NodeId>),
    DotConst {
        input: NodeId,
        weights: Arc<Tensor>,
    },
    AvgPool {
        input: NodeId,
        size: usize,
    },
    ClsLoss {
        probs: NodeId,
        target: usize,
    },
    SegLoss {
        probs: NodeId,
        labels: Arc<Vec<usize>>,
    },
    SeqNll {
        logits: NodeId,
        grad: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, NodeId>,
    grads: Vec<Option<Tensor>>,
    clamped: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn arc(&self, id: NodeId) -> Arc<Tensor> {
        self.nodes[id.0].value.clone()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of log evaluations that hit the `ε` clamp while recording.
    pub fn clamped_logs(&self) -> usize {
        self.clamped
    }

    /// A constant input; it receives a gradient but feeds no parameter.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// The leaf for parameter `name`, created on first use.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let Some(value) = params.get(name) else {
            return arg(format!("unknown parameter {name:?}"));
        };
        let id = self.push(value.clone(), Op::Leaf);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn layer(&mut self, kind: LayerKind, inputs: &[NodeId], params: &[NodeId]) -> Result<NodeId> {
        let in_vals: Vec<_> = inputs.iter().map(|&i| self.arc(i)).collect();
        let par_vals: Vec<_> = params.iter().map(|&i| self.arc(i)).collect();
        let (out, saved) = layer_forward(&kind, &in_vals, &par_vals)?;
        Ok(self.push(
            out,
            Op::Layer {
                inputs: inputs.to_vec(),
                params: params.to_vec(),
                saved,
            },
        ))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        self.layer(LayerKind::Conv2d { stride, pad }, &[x], &[w, b])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.layer(LayerKind::Relu, &[x], &[])
    }

    pub fn maxpool(&mut self, x: NodeId, size: usize) -> Result<(NodeId, PoolIndices)> {
        let id = self.layer(LayerKind::MaxPool { size }, &[x], &[])?;
        let Op::Layer {
            saved: Saved::MaxPool { indices },
            ..
        } = &self.nodes[id.0].op
        else {
            unreachable!("maxpool records its indices")
        };
        Ok((id, indices.clone()))
    }

    pub fn maxunpool(&mut self, x: NodeId, indices: &PoolIndices) -> Result<NodeId> {
        self.layer(
            LayerKind::MaxUnpool {
                indices: indices.clone(),
            },
            &[x],
            &[],
        )
    }

    pub fn fc(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.layer(LayerKind::Fc, &[x], &[w, b])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.layer(LayerKind::Softmax, &[x], &[])
    }

    pub fn embed(&mut self, table: NodeId, token: usize) -> Result<NodeId> {
        self.layer(LayerKind::Embed { token }, &[], &[table])
    }

    /// One LSTM step; returns the new `(h, c)`.
    pub fn lstm_step(&mut self, x: NodeId, h: NodeId, c: NodeId, w: NodeId, b: NodeId) -> Result<(NodeId, NodeId)> {
        let d = self.value(h).len();
        let both = self.layer(LayerKind::LstmStep, &[x, h, c], &[w, b])?;
        Ok((self.slice(both, 0, &[d])?, self.slice(both, d, &[d])?))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec())))
    }

    /// Contiguous flat range `start..start + prod(shape)` of `x`, given `shape`.
    pub fn slice(&mut self, x: NodeId, start: usize, out_shape: &[usize]) -> Result<NodeId> {
        let n: usize = out_shape.iter().product();
        let src = self.value(x).data();
        if start + n > src.len() {
            return shape(format!("slice {start}..{} of {} elements", start + n, src.len()));
        }
        let value = Tensor::from_vec(out_shape, src[start..start + n].to_vec())?;
        Ok(self.push(value, Op::Slice { input: x, start }))
    }

    pub fn reshape(&mut self, x: NodeId, out_shape: &[usize]) -> Result<NodeId> {
        let value = (*self.arc(x)).clone().reshape(out_shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn mask_mul(&mut self, mask: NodeId, image: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(image).chw()?;
        if self.value(mask).len() != h * w {
            return shape(format!(
                "mask of {} elements for a {h}×{w} image",
                self.value(mask).len()
            ));
        }
        let m = self.value(mask).data();
        let mut out = self.value(image).clone();
        for ch in 0..c {
            for (o, &mv) in out.data_mut()[ch * h * w..(ch + 1) * h * w].iter_mut().zip(m) {
                *o *= mv;
            }
        }
        Ok(self.push(out, Op::MaskMul { mask, image }))
    }

    /// `out[k] = x[index[k]]`, reshaped to `out_shape`.
    pub fn gather(&mut self, x: NodeId, index: Arc<Vec<usize>>, out_shape: &[usize]) -> Result<NodeId> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return shape(format!("gather index {bad} outside {} elements", src.len()));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let value = Tensor::from_vec(out_shape, data)?;
        Ok(self.push(value, Op::Gather { input: x, index }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if !self.value(a).same_shape(self.value(b)) {
            return shape("add operands differ in shape");
        }
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        let mut v = self.value(x).clone();
        v.scale(k);
        Ok(self.push(v, Op::Scale(x, k)))
    }

    /// `x + k` elementwise.
    pub fn shift(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        let v = self.value(x).map(|v| v + k);
        Ok(self.push(v, Op::Shift(x)))
    }

    /// Mean of equally shaped nodes.
    pub fn mean(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = xs.first() else {
            return arg("mean of nothing");
        };
        let mut v = Tensor::zeros(self.value(first).shape());
        for &x in xs {
            if !self.value(x).same_shape(&v) {
                return shape("mean operands differ in shape");
            }
            v.add_assign(self.value(x));
        }
        v.scale(1.0 / xs.len() as f64);
        Ok(self.push(v, Op::Mean(xs.to_vec())))
    }

    /// Scalar `Σ x ⊙ weights`.
    pub fn dot_const(&mut self, x: NodeId, weights: Tensor) -> Result<NodeId> {
        if weights.len() != self.value(x).len() {
            return shape("dot operands differ in length");
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::DotConst {
                input: x,
                weights: Arc::new(weights),
            },
        ))
    }

    /// Fixed (parameter-free) `size × size` average pooling of a `(C, H, W)` node.
    pub fn avgpool(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let (c, h, w) = self.value(x).chw()?;
        if size == 0 || h % size != 0 || w % size != 0 {
            return shape(format!("avgpool {size} needs divisible {h}×{w}"));
        }
        let (oh, ow) = (h / size, w / size);
        let src = self.value(x).data();
        let k = 1.0 / (size * size) as f64;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out[(ch * oh + i / size) * ow + j / size] += src[(ch * h + i) * w + j] * k;
                }
            }
        }
        let value = Tensor::from_vec(&[c, oh, ow], out)?;
        Ok(self.push(value, Op::AvgPool { input: x, size }))
    }

    /// `−ln p_target` for a probability vector node.
    pub fn cls_loss(&mut self, probs: NodeId, target: usize) -> Result<NodeId> {
        let p = self.value(probs).data();
        if target >= p.len() {
            return arg(format!("class {target} outside {} classes", p.len()));
        }
        let (l, hit) = clamped_nll(p[target]);
        self.clamped += hit as usize;
        Ok(self.push(Tensor::scalar(l), Op::ClsLoss { probs, target }))
    }

    /// Mean per-pixel log-loss of a `(K, H, W)` probability node.
    pub fn seg_loss(&mut self, probs: NodeId, labels: Arc<Vec<usize>>) -> Result<NodeId> {
        let v = self.value(probs);
        let k = v.shape()[0];
        let n = v.len() / k;
        if labels.len() != n {
            return shape(format!("{} labels for {n} pixels", labels.len()));
        }
        let mut total = 0.0;
        let mut hits = 0;
        for (i, &s) in labels.iter().enumerate() {
            if s >= k {
                return arg(format!("label {s} outside {k} classes"));
            }
            let (l, hit) = clamped_nll(v.data()[s * n + i]);
            total += l;
            hits += hit as usize;
        }
        self.clamped += hits;
        Ok(self.push(Tensor::scalar(total / n as f64), Op::SegLoss { probs, labels }))
    }

    pub fn seq_nll(&mut self, logits: NodeId, targets: &[usize], pad: usize) -> Result<NodeId> {
        let (l, grad, hits) = seq_nll_with_grad(self.value(logits), targets, pad)?;
        self.clamped += hits;
        Ok(self.push(Tensor::scalar(l), Op::SeqNll { logits, grad }))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return shape("backward needs a scalar loss");
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let mut send = |target: NodeId, t: Tensor| {
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Layer {
                    inputs,
                    params,
                    saved,
                } => {
                    let lg = layer_backward(saved, &g)?;
                    for (&i, t) in inputs.iter().zip(lg.inputs) {
                        send(i, t);
                    }
                    for (&p, t) in params.iter().zip(lg.params) {
                        send(p, t);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].value.len();
                        let shape = self.nodes[p.0].value.shape().to_vec();
                        send(p, Tensor::from_vec(&shape, g.data()[off..off + n].to_vec())?);
                        off += n;
                    }
                }
                Op::Slice { input, start } => {
                    let mut t = Tensor::zeros(self.nodes[input.0].value.shape());
                    t.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                    send(*input, t);
                }
                Op::Reshape(input) => {
                    let shape = self.nodes[input.0].value.shape().to_vec();
                    send(*input, g.reshape(&shape)?);
                }
                Op::MaskMul { mask, image } => {
                    let img = &self.nodes[image.0].value;
                    let m = &self.nodes[mask.0].value;
                    let (c, h, w) = img.chw()?;
                    let mut dm = Tensor::zeros(m.shape());
                    let mut di = g.clone();
                    for ch in 0..c {
                        let base = ch * h * w;
                        for k in 0..h * w {
                            dm.data_mut()[k] += g.data()[base + k] * img.data()[base + k];
                            di.data_mut()[base + k] *= m.data()[k];
                        }
                    }
                    send(*mask, dm);
                    send(*image, di);
                }
                Op::Gather { input, index } => {
                    let mut t = Tensor::zeros(self.nodes[input.0].value.shape());
                    for (&i, &gv) in index.iter().zip(g.data()) {
                        t.data_mut()[i] += gv;
                    }
                    send(*input, t);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Scale(x, k) => {
                    let mut t = g;
                    t.scale(*k);
                    send(*x, t);
                }
                Op::Shift(x) => send(*x, g),
                Op::Mean(xs) => {
                    let mut t = g;
                    t.scale(1.0 / xs.len() as f64);
                    for &x in xs {
                        send(x, t.clone());
                    }
                }
                Op::DotConst { input, weights } => {
                    let mut t = (**weights).clone().reshape(self.nodes[input.0].value.shape())?;
                    t.scale(g.item());
                    send(*input, t);
                }
                Op::AvgPool { input, size } => {
                    let src = &self.nodes[input.0].value;
                    let (c, h, w) = src.chw()?;
                    let (oh, ow) = (h / size, w / size);
                    let k = 1.0 / (size * size) as f64;
                    let mut t = Tensor::zeros(src.shape());
                    for ch in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                t.data_mut()[(ch * h + i) * w + j] =
                                    g.data()[(ch * oh + i / size) * ow + j / size] * k;
                            }
                        }
                    }
                    send(*input, t);
                }
                Op::ClsLoss { probs, target } => {
                    let p = &self.nodes[probs.0].value;
                    let mut t = Tensor::zeros(p.shape());
                    let pu = p.data()[*target];
                    if pu >= crate::micrograd::loss::LOG_EPS {
                        t.data_mut()[*target] = -g.item() / pu;
                    }
                    send(*probs, t);
                }
                Op::SegLoss { probs, labels } => {
                    let p = &self.nodes[probs.0].value;
                    let n = labels.len();
                    let mut t = Tensor::zeros(p.shape());
                    let scale = g.item() / n as f64;
                    for (i, &s) in labels.iter().enumerate() {
                        let pv = p.data()[s * n + i];
                        if pv >= crate::micrograd::loss::LOG_EPS {
                            t.data_mut()[s * n + i] = -scale / pv;
                        }
                    }
                    send(*probs, t);
                }
                Op::SeqNll { logits, grad } => {
                    let mut t = grad.clone();
                    t.scale(g.item());
                    send(*logits, t);
                }
            }
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient".into()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward's loss with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of the last backward's loss with respect to parameter `name`;
    /// `None` if the parameter was never used.
    pub fn param_grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|&id| self.grad(id))
    }

    /// Adds the parameter-leaf gradients of the last backward into `params`.
    pub fn accumulate_into(&self, params: &mut ParameterSet) -> Result<()> {
        for (name, &id) in &self.params {
            if let Some(g) = self.grad(id) {
                params.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}
