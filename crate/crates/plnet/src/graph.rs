//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Graph`] owns every intermediate of one forward pass. Operations append
//! nodes, so node indices are already a topological order; [`Graph::backward`]
//! walks them once in reverse, accumulating `d root / d node` into each
//! node's grad buffer. Graphs are cheap and single-use: the trainer builds a
//! fresh one per sample.
//!
//! Conventions, applied uniformly:
//! - row-major layout, the last axis contiguous;
//! - max-style ops break ties toward the first element in row-major order;
//! - no broadcasting except the per-channel bias add inside `conv2d`.

use crate::error::{Error, Result};
use crate::partgen::PartBox;
use crate::tensor::Tensor;

/// Handle to a node inside one [`Graph`]. Not valid across graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    },
    Relu {
        input: NodeId,
    },
    /// `argmax` holds, per output element, the flat offset of the winning
    /// input element.
    MaxPool2d {
        input: NodeId,
        argmax: Vec<usize>,
    },
    /// `probs` is the stabilized softmax of the logits, kept for backward.
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<f64>,
    },
    /// Per-channel mean over the spatial grid: `[C, H, W] -> [C]`.
    SpatialMean {
        input: NodeId,
    },
    RoiPoolMax {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Add {
        lhs: NodeId,
        rhs: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    Sum {
        input: NodeId,
    },
    Mul {
        lhs: NodeId,
        rhs: NodeId,
    },
    /// Stack rank-3 inputs along the channel axis.
    ConcatChannels {
        inputs: Vec<NodeId>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Split a length `len` into `bins` half-open ranges by even integer
/// splitting. A bin that would be empty is widened to cover the cell at its
/// clamped start, so every bin spans at least one cell even when `len < bins`.
pub fn bin_ranges(len: usize, bins: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(bins);
    for i in 0..bins {
        let mut start = i * len / bins;
        let mut end = (i + 1) * len / bins;
        if end <= start {
            start = start.min(len - 1);
            end = start + 1;
        }
        out.push((start, end));
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let grad = Tensor::zeros(value.shape());
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
    }

    /// 2-D cross-correlation of `input [Cin, H, W]` with
    /// `kernel [Cout, Cin, kh, kw]` plus a per-output-channel bias.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        let (x_shape, k_shape) = (x.shape().to_vec(), k.shape().to_vec());
        if x_shape.len() != 3 || k_shape.len() != 4 {
            return Err(Error::Config(format!(
                "conv2d expects input rank 3 and kernel rank 4, got {:?} and {:?}",
                x_shape, k_shape
            )));
        }
        let (cin, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
        let (cout, kcin, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if cin != kcin {
            return Err(Error::Config(format!(
                "conv2d channel mismatch: input has {} channels, kernel expects {}",
                cin, kcin
            )));
        }
        if b.shape() != [cout] {
            return Err(Error::Config(format!(
                "conv2d bias shape {:?} does not match {} output channels",
                b.shape(),
                cout
            )));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Config(format!(
                "conv2d kernel {}x{} larger than padded input {}x{}",
                kh,
                kw,
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;

        let mut out = Tensor::zeros(&[cout, oh, ow]);
        let xd = x.data();
        let kd = k.data();
        let bd = b.data();
        let od = out.data_mut();
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bd[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += xd[(ci * h + iy as usize) * w + ix as usize]
                                    * kd[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    od[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
        ))
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu { input })
    }

    /// Per-channel windowed max over `[C, H, W]`. Gradient flows to the
    /// first maximal element of each window in row-major order.
    pub fn max_pool2d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::Config(format!(
                "max_pool2d expects rank 3, got {:?}",
                shape
            )));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if window > h || window > w {
            return Err(Error::Config(format!(
                "max_pool2d window {} exceeds input {}x{}",
                window, h, w
            )));
        }
        if stride == 0 {
            return Err(Error::Config("max_pool2d stride must be positive".into()));
        }
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let xd = x.data();
        let mut out = Tensor::zeros(&[c, oh, ow]);
        let mut argmax = vec![0usize; c * oh * ow];
        let od = out.data_mut();
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_off = 0;
                    for wy in 0..window {
                        for wx in 0..window {
                            let off = (ch * h + oy * stride + wy) * w + ox * stride + wx;
                            if xd[off] > best {
                                best = xd[off];
                                best_off = off;
                            }
                        }
                    }
                    let o = (ch * oh + oy) * ow + ox;
                    od[o] = best;
                    argmax[o] = best_off;
                }
            }
        }
        Ok(self.push(out, Op::MaxPool2d { input, argmax }))
    }

    /// Cross-entropy of the softmax over a length-`C` logit vector against an
    /// integer label, computed with max-subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let y = self.value(logits);
        if y.rank() != 1 {
            return Err(Error::Config(format!(
                "softmax_cross_entropy expects a rank-1 logit vector, got {:?}",
                y.shape()
            )));
        }
        let c = y.len();
        if label >= c {
            return Err(Error::Input(format!(
                "label {} out of range for {} classes",
                label, c
            )));
        }
        let yd = y.data();
        let max = yd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = yd.iter().map(|v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / denom).collect();
        let loss = denom.ln() - (yd[label] - max);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
        ))
    }

    /// Per-channel spatial mean: `[C, H, W] -> [C]`.
    pub fn spatial_mean(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::Config(format!(
                "spatial_mean expects rank 3, got {:?}",
                shape
            )));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let area = (h * w) as f64;
        let xd = x.data();
        let mut out = Tensor::zeros(&[c]);
        for ch in 0..c {
            out.data_mut()[ch] = xd[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / area;
        }
        Ok(self.push(out, Op::SpatialMean { input }))
    }

    /// Max-pool the cells of `part` into an `out_h` x `out_w` grid per
    /// channel. Bin boundaries come from [`bin_ranges`] over the box extent.
    pub fn roi_pool_max(
        &mut self,
        input: NodeId,
        part: &PartBox,
        out_h: usize,
        out_w: usize,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::Config(format!(
                "roi_pool expects rank 3, got {:?}",
                shape
            )));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if part.bottom >= h || part.right >= w {
            return Err(Error::Config(format!(
                "part box {:?} exceeds feature map {}x{}",
                part, h, w
            )));
        }
        let row_bins = bin_ranges(part.bottom - part.top + 1, out_h);
        let col_bins = bin_ranges(part.right - part.left + 1, out_w);
        let xd = x.data();
        let mut out = Tensor::zeros(&[c, out_h, out_w]);
        let mut argmax = vec![0usize; c * out_h * out_w];
        let od = out.data_mut();
        for ch in 0..c {
            for (by, &(r0, r1)) in row_bins.iter().enumerate() {
                for (bx, &(c0, c1)) in col_bins.iter().enumerate() {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_off = 0;
                    for r in r0..r1 {
                        for cc in c0..c1 {
                            let off = (ch * h + part.top + r) * w + part.left + cc;
                            if xd[off] > best {
                                best = xd[off];
                                best_off = off;
                            }
                        }
                    }
                    let o = (ch * out_h + by) * out_w + bx;
                    od[o] = best;
                    argmax[o] = best_off;
                }
            }
        }
        Ok(self.push(out, Op::RoiPoolMax { input, argmax }))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        if self.value(lhs).shape() != self.value(rhs).shape() {
            return Err(Error::Config(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.value(lhs).shape(),
                self.value(rhs).shape()
            )));
        }
        let mut out = self.value(lhs).clone();
        out.add_assign(self.value(rhs));
        Ok(self.push(out, Op::Add { lhs, rhs }))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let mut out = self.value(input).clone();
        out.scale_in_place(factor);
        self.push(out, Op::Scale { input, factor })
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total = self.value(input).sum();
        self.push(Tensor::scalar(total), Op::Sum { input })
    }

    pub fn mul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        if self.value(lhs).shape() != self.value(rhs).shape() {
            return Err(Error::Config(format!(
                "mul shape mismatch: {:?} vs {:?}",
                self.value(lhs).shape(),
                self.value(rhs).shape()
            )));
        }
        let mut out = self.value(lhs).clone();
        for (a, b) in out.data_mut().iter_mut().zip(self.value(rhs).data()) {
            *a *= *b;
        }
        Ok(self.push(out, Op::Mul { lhs, rhs }))
    }

    /// Concatenate rank-3 tensors of identical spatial size along channels.
    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Config("concat_channels needs at least one input".into()));
        }
        let first = self.value(inputs[0]).shape().to_vec();
        if first.len() != 3 {
            return Err(Error::Config(format!(
                "concat_channels expects rank 3, got {:?}",
                first
            )));
        }
        let (h, w) = (first[1], first[2]);
        let mut total_c = 0;
        for &id in inputs {
            let s = self.value(id).shape();
            if s.len() != 3 || s[1] != h || s[2] != w {
                return Err(Error::Config(format!(
                    "concat_channels spatial mismatch: {:?} vs {}x{}",
                    s, h, w
                )));
            }
            total_c += s[0];
        }
        let mut data = Vec::with_capacity(total_c * h * w);
        for &id in inputs {
            data.extend_from_slice(self.value(id).data());
        }
        let out = Tensor::from_vec(&[total_c, h, w], data)?;
        Ok(self.push(
            out,
            Op::ConcatChannels {
                inputs: inputs.to_vec(),
            },
        ))
    }

    /// Accumulate `d root / d node` into every node's grad buffer. The root
    /// must be scalar. Calling twice without [`Graph::zero_grads`] adds the
    /// contributions again.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        // Repeated backward calls accumulate into leaf gradients only;
        // interior gradients are scratch state for the sweep.
        for node in self.nodes.iter_mut().take(root.0 + 1) {
            if !matches!(node.op, Op::Leaf) {
                node.grad.fill(0.0);
            }
        }
        self.nodes[root.0].grad.data_mut()[0] += 1.0;
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    pad,
                } => {
                    let (input, kernel, bias) = (input.0, kernel.0, bias.0);
                    let (stride, pad) = (*stride, *pad);
                    let g = node.grad.data();
                    let out_shape = node.value.shape();
                    let (cout, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
                    let x_shape = before[input].value.shape().to_vec();
                    let (cin, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
                    let k_shape = before[kernel].value.shape().to_vec();
                    let (kh, kw) = (k_shape[2], k_shape[3]);
                    for co in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = g[(co * oh + oy) * ow + ox];
                                if go == 0.0 {
                                    continue;
                                }
                                before[bias].grad.data_mut()[co] += go;
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            let x_off =
                                                (ci * h + iy as usize) * w + ix as usize;
                                            let k_off =
                                                ((co * cin + ci) * kh + ky) * kw + kx;
                                            let xv = before[input].value.data()[x_off];
                                            let kv = before[kernel].value.data()[k_off];
                                            before[input].grad.data_mut()[x_off] += go * kv;
                                            before[kernel].grad.data_mut()[k_off] += go * xv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Relu { input } => {
                    let input = input.0;
                    for (off, (&g, &x)) in node
                        .grad
                        .data()
                        .iter()
                        .zip(before[input].value.data())
                        .enumerate()
                    {
                        if x > 0.0 {
                            before[input].grad.data_mut()[off] += g;
                        }
                    }
                }
                Op::MaxPool2d { input, argmax } | Op::RoiPoolMax { input, argmax } => {
                    let input = input.0;
                    for (o, &src) in argmax.iter().enumerate() {
                        before[input].grad.data_mut()[src] += node.grad.data()[o];
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let logits = logits.0;
                    let g = node.grad.data()[0];
                    let gd = before[logits].grad.data_mut();
                    for (c, &p) in probs.iter().enumerate() {
                        gd[c] += g * (p - if c == *label { 1.0 } else { 0.0 });
                    }
                }
                Op::SpatialMean { input } => {
                    let input = input.0;
                    let shape = before[input].value.shape().to_vec();
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let area = (h * w) as f64;
                    for ch in 0..c {
                        let g = node.grad.data()[ch] / area;
                        for off in ch * h * w..(ch + 1) * h * w {
                            before[input].grad.data_mut()[off] += g;
                        }
                    }
                }
                Op::Add { lhs, rhs } => {
                    let (lhs, rhs) = (lhs.0, rhs.0);
                    let g = node.grad.clone();
                    before[lhs].grad.add_assign(&g);
                    before[rhs].grad.add_assign(&g);
                }
                Op::Scale { input, factor } => {
                    let (input, factor) = (input.0, *factor);
                    for (off, &g) in node.grad.data().iter().enumerate() {
                        before[input].grad.data_mut()[off] += g * factor;
                    }
                }
                Op::Sum { input } => {
                    let input = input.0;
                    let g = node.grad.data()[0];
                    for v in before[input].grad.data_mut() {
                        *v += g;
                    }
                }
                Op::Mul { lhs, rhs } => {
                    let (lhs, rhs) = (lhs.0, rhs.0);
                    for off in 0..node.grad.len() {
                        let g = node.grad.data()[off];
                        let a = before[lhs].value.data()[off];
                        let b = before[rhs].value.data()[off];
                        before[lhs].grad.data_mut()[off] += g * b;
                        before[rhs].grad.data_mut()[off] += g * a;
                    }
                }
                Op::ConcatChannels { inputs } => {
                    let ids: Vec<usize> = inputs.iter().map(|n| n.0).collect();
                    let mut cursor = 0;
                    for id in ids {
                        let len = before[id].value.len();
                        for off in 0..len {
                            before[id].grad.data_mut()[off] +=
                                node.grad.data()[cursor + off];
                        }
                        cursor += len;
                    }
                }
            }
        }
        Ok(())
    }
}
