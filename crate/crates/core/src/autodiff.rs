//! Reverse-mode automatic differentiation over a recorded operation graph.
//!
//! Operations evaluate eagerly and append a node holding their output and
//! the ids of their inputs. Node ids are handed out in creation order, so
//! the node list is always topologically sorted and `backward` is a single
//! reverse sweep. Gradient contributions are accumulated in that fixed
//! order, which makes repeated passes bitwise reproducible.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
    },
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    LogSoftmax(NodeId),
    Nll {
        log_probs: NodeId,
        labels: Vec<u8>,
        weights: Option<Vec<f64>>,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Reshape(NodeId),
    WeightedSqDist {
        x: NodeId,
        anchor: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        id
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A named trainable leaf. Registering a name twice returns the first node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> NodeId {
        if let Some(id) = self.param_id(name) {
            return id;
        }
        let id = self.push(value.clone(), Op::Leaf, true);
        self.params.push((name.to_string(), id));
        id
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
    }

    /// Names of registered parameters, in registration order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    /// Matrix product `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul of {sa:?} and {sb:?}: inner dimensions disagree"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Valid (unpadded), stride-1 2-D cross-correlation.
    ///
    /// `input` is `[C×H×W]`, `kernels` is `[O×C×kh×kw]`, `bias` is `[O]`;
    /// the output is `[O×(H−kh+1)×(W−kw+1)]`. Kernels are not flipped.
    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
        let geo = ConvGeometry::check(
            self.value(input).shape(),
            self.value(kernels).shape(),
            self.value(bias).shape(),
        )?;
        let out = conv_forward(
            &geo,
            self.value(input).data(),
            self.value(kernels).data(),
            self.value(bias).data(),
        );
        let rg = self.needs(&[input, kernels, bias]);
        let value = Tensor::new(vec![geo.out_c, geo.out_h, geo.out_w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                bias,
            },
            rg,
        ))
    }

    /// Adds `bias[c]` to every element of row `c` of `x` (`x` is `[C × ...]`).
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.shape().first().copied().unwrap_or(0);
        if bv.shape() != [c] {
            return Err(Error::Dimension(format!(
                "bias of shape {:?} does not match leading dimension of {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let inner = xv.len() / c;
        let mut out = xv.data().to_vec();
        for (row, &b) in out.chunks_mut(inner).zip(bv.data()) {
            row.iter_mut().for_each(|v| *v += b);
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.needs(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// Column-wise log-softmax of `[K×N]` logits (classes along rows).
    pub fn log_softmax(&mut self, logits: NodeId) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] < 2 {
            return Err(Error::Dimension(format!(
                "log_softmax expects [K×N] with K ≥ 2, got {:?}",
                lv.shape()
            )));
        }
        let (k, n) = (lv.shape()[0], lv.shape()[1]);
        let out = log_softmax_columns(lv.data(), k, n);
        let rg = self.needs(&[logits]);
        Ok(self.push(Tensor::new(vec![k, n], out)?, Op::LogSoftmax(logits), rg))
    }

    /// Mean weighted negative log-likelihood `−(1/N)·Σ w[y_n]·logp[y_n, n]`.
    pub fn nll_loss(
        &mut self,
        log_probs: NodeId,
        labels: &[u8],
        weights: Option<&[f64]>,
    ) -> Result<NodeId> {
        let lp = self.value(log_probs);
        if lp.rank() != 2 || lp.shape()[1] != labels.len() {
            return Err(Error::Dimension(format!(
                "nll_loss: log-probs {:?} vs {} labels",
                lp.shape(),
                labels.len()
            )));
        }
        let (k, n) = (lp.shape()[0], lp.shape()[1]);
        if let Some(w) = weights {
            if w.len() != k {
                return Err(Error::Dimension(format!(
                    "nll_loss: {} class weights for {k} classes",
                    w.len()
                )));
            }
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y as usize >= k) {
            return Err(Error::Label {
                index,
                label: label as usize,
                classes: k,
            });
        }
        let data = lp.data();
        let mut acc = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[y as usize]);
            acc += w * data[y as usize * n + i];
        }
        let value = Tensor::scalar(-acc / n as f64);
        let rg = self.needs(&[log_probs]);
        Ok(self.push(
            value,
            Op::Nll {
                log_probs,
                labels: labels.to_vec(),
                weights: weights.map(<[f64]>::to_vec),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_values(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_values(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `Σ_i w_i·(x_i − a_i)²` as a scalar node.
    pub fn weighted_sq_dist(&mut self, x: NodeId, anchor: &[f64], weights: &[f64]) -> Result<NodeId> {
        let xv = self.value(x);
        if anchor.len() != xv.len() || weights.len() != xv.len() {
            return Err(Error::Dimension(format!(
                "weighted_sq_dist: {} values, {} anchors, {} weights",
                xv.len(),
                anchor.len(),
                weights.len()
            )));
        }
        let mut acc = 0.0;
        for ((&v, &a), &w) in xv.data().iter().zip(anchor).zip(weights) {
            let d = v - a;
            acc += w * d * d;
        }
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::scalar(acc),
            Op::WeightedSqDist {
                x,
                anchor: anchor.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    fn zip_values(
        &self,
        a: NodeId,
        b: NodeId,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Dimension(format!(
                "{what} of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    /// Reverse sweep from a scalar `loss`, returning the gradient of every
    /// registered parameter. Parameters the loss does not depend on get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }

        let entries = self
            .params
            .iter()
            .map(|(name, id)| {
                let g = grads[id.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.value(*id).shape()));
                (name.clone(), g)
            })
            .collect();
        Ok(GradientMap { entries })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    // dA = dC · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let up_row = &up.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let b_row = &bv.data()[p * n..(p + 1) * n];
                            ga[i * k + p] = dot(up_row, b_row);
                        }
                    }
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga)?);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · dC
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let up_row = &up.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av.data()[i * k + p];
                            axpy(a_ip, up_row, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb)?);
                }
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
            } => {
                let (iv, kv) = (self.value(*input), self.value(*kernels));
                let geo = ConvGeometry::check(iv.shape(), kv.shape(), self.value(*bias).shape())?;
                let plane = geo.out_h * geo.out_w;
                if self.wants(*bias) {
                    let gb: Vec<f64> = up
                        .data()
                        .chunks(plane)
                        .map(|p| p.iter().sum())
                        .collect();
                    self.accumulate(grads, *bias, Tensor::new(vec![geo.out_c], gb)?);
                }
                if self.wants(*kernels) {
                    let gk = conv_kernel_grad(&geo, iv.data(), up.data());
                    self.accumulate(grads, *kernels, Tensor::new(kv.shape().to_vec(), gk)?);
                }
                if self.wants(*input) {
                    let gi = conv_input_grad(&geo, kv.data(), up.data());
                    self.accumulate(grads, *input, Tensor::new(iv.shape().to_vec(), gi)?);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*b) {
                    let c = self.value(*b).len();
                    let inner = up.len() / c;
                    let gb = up
                        .data()
                        .chunks(inner)
                        .map(|row| row.iter().sum())
                        .collect();
                    self.accumulate(grads, *b, Tensor::new(vec![c], gb)?);
                }
                self.accumulate(grads, *x, up.clone());
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let g = xv
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(&v, &u)| if v > 0.0 { u } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), g)?);
            }
            Op::LogSoftmax(x) => {
                // dx = dy − softmax · Σ_k dy, per column
                let out = &node.value;
                let (k, n) = (out.shape()[0], out.shape()[1]);
                let mut col_sum = vec![0.0; n];
                for r in 0..k {
                    for (s, &u) in col_sum.iter_mut().zip(&up.data()[r * n..(r + 1) * n]) {
                        *s += u;
                    }
                }
                let mut g = vec![0.0; k * n];
                for r in 0..k {
                    let row = r * n..(r + 1) * n;
                    for (((gv, &u), &lp), &s) in g[row.clone()]
                        .iter_mut()
                        .zip(&up.data()[row.clone()])
                        .zip(&out.data()[row])
                        .zip(&col_sum)
                    {
                        *gv = u - lp.exp() * s;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![k, n], g)?);
            }
            Op::Nll {
                log_probs,
                labels,
                weights,
            } => {
                let lp = self.value(*log_probs);
                let n = lp.shape()[1];
                let scale = -up.data()[0] / n as f64;
                let mut g = vec![0.0; lp.len()];
                for (i, &y) in labels.iter().enumerate() {
                    let w = weights.as_ref().map_or(1.0, |w| w[y as usize]);
                    g[y as usize * n + i] = scale * w;
                }
                self.accumulate(grads, *log_probs, Tensor::new(lp.shape().to_vec(), g)?);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, up.clone());
                self.accumulate(grads, *b, up.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let g = up.data().iter().zip(bv.data()).map(|(u, v)| u * v).collect();
                    self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), g)?);
                }
                if self.wants(*b) {
                    let g = up.data().iter().zip(av.data()).map(|(u, v)| u * v).collect();
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), g)?);
                }
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, up.map(|u| u * factor));
            }
            Op::Sum(x) => {
                let u = up.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), u));
            }
            Op::Reshape(x) => {
                let g = up.clone().reshape(self.value(*x).shape().to_vec())?;
                self.accumulate(grads, *x, g);
            }
            Op::WeightedSqDist { x, anchor, weights } => {
                let xv = self.value(*x);
                let u = up.data()[0];
                let g = xv
                    .data()
                    .iter()
                    .zip(anchor)
                    .zip(weights)
                    .map(|((&v, &a), &w)| 2.0 * u * w * (v - a))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), g)?);
            }
        }
        Ok(())
    }
}

/// Gradients keyed by parameter name, in graph registration order.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    entries: Vec<(String, Tensor)>,
}

impl GradientMap {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Flattens into the index space of `params`; entries missing here are zero.
    pub fn to_flat(&self, params: &ParamStore) -> Vec<f64> {
        let mut out = vec![0.0; params.num_params()];
        for entry in params.entries() {
            if let Some(g) = self.get(entry.name()) {
                out[entry.range()].copy_from_slice(g.data());
            }
        }
        out
    }

    /// Adds `other` into `self` entry-wise; names missing from `self` are appended.
    pub fn accumulate(&mut self, other: &GradientMap) {
        for (name, g) in other.iter() {
            match self.entries.iter_mut().find(|(n, _)| n == name) {
                Some((_, t)) => t.add_assign(g),
                None => self.entries.push((name.to_string(), g.clone())),
            }
        }
    }
}

/// Central finite differences `(f(θ+h) − f(θ−h)) / 2h` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, params: &ParamStore, h: f64) -> GradientMap
where
    F: FnMut(&ParamStore) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = params.clone();
    let mut entries = Vec::with_capacity(params.entries().len());
    for entry in params.entries() {
        let mut g = Vec::with_capacity(entry.tensor().len());
        for idx in entry.range() {
            let orig = entry.tensor().data()[idx - entry.offset()];
            probe.set_flat_value(idx, orig + h);
            let plus = f(&probe);
            probe.set_flat_value(idx, orig - h);
            let minus = f(&probe);
            probe.set_flat_value(idx, orig);
            g.push((plus - minus) / (2.0 * h));
        }
        let t = Tensor::new(entry.tensor().shape().to_vec(), g).expect("shape preserved");
        entries.push((entry.name().to_string(), t));
    }
    GradientMap { entries }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn check(input: &[usize], kernels: &[usize], bias: &[usize]) -> Result<Self> {
        if input.len() != 3 || kernels.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d expects input [C×H×W] and kernels [O×C×kh×kw], got {input:?} and {kernels:?}"
            )));
        }
        let (in_c, in_h, in_w) = (input[0], input[1], input[2]);
        let (out_c, kc, kh, kw) = (kernels[0], kernels[1], kernels[2], kernels[3]);
        if kc != in_c {
            return Err(Error::Dimension(format!(
                "conv2d: input {input:?} has {in_c} channels, kernels {kernels:?} expect {kc}"
            )));
        }
        if bias != [out_c] {
            return Err(Error::Dimension(format!(
                "conv2d: bias {bias:?} does not match {out_c} output channels"
            )));
        }
        if in_h < kh || in_w < kw {
            return Err(Error::Dimension(format!(
                "conv2d: input {input:?} is smaller than kernel {kh}×{kw}"
            )));
        }
        Ok(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            out_h: in_h - kh + 1,
            out_w: in_w - kw + 1,
        })
    }
}

fn conv_forward(g: &ConvGeometry, input: &[f64], kernels: &[f64], bias: &[f64]) -> Vec<f64> {
    let plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    let mut out = vec![0.0; g.out_c * plane];
    for o in 0..g.out_c {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        out_plane.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..g.in_c {
            let in_ch = &input[c * in_plane..(c + 1) * in_plane];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let w = kernels[((o * g.in_c + c) * g.kh + ky) * g.kw + kx];
                    for y in 0..g.out_h {
                        let src = &in_ch[(y + ky) * g.in_w + kx..][..g.out_w];
                        axpy(w, src, &mut out_plane[y * g.out_w..(y + 1) * g.out_w]);
                    }
                }
            }
        }
    }
    out
}

fn conv_kernel_grad(g: &ConvGeometry, input: &[f64], up: &[f64]) -> Vec<f64> {
    let plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    let mut gk = vec![0.0; g.out_c * g.in_c * g.kh * g.kw];
    for o in 0..g.out_c {
        let up_plane = &up[o * plane..(o + 1) * plane];
        for c in 0..g.in_c {
            let in_ch = &input[c * in_plane..(c + 1) * in_plane];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let mut acc = 0.0;
                    for y in 0..g.out_h {
                        let src = &in_ch[(y + ky) * g.in_w + kx..][..g.out_w];
                        acc += dot(&up_plane[y * g.out_w..(y + 1) * g.out_w], src);
                    }
                    gk[((o * g.in_c + c) * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    }
    gk
}

fn conv_input_grad(g: &ConvGeometry, kernels: &[f64], up: &[f64]) -> Vec<f64> {
    let plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    let mut gi = vec![0.0; g.in_c * in_plane];
    for o in 0..g.out_c {
        let up_plane = &up[o * plane..(o + 1) * plane];
        for c in 0..g.in_c {
            let gi_ch = &mut gi[c * in_plane..(c + 1) * in_plane];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let w = kernels[((o * g.in_c + c) * g.kh + ky) * g.kw + kx];
                    for y in 0..g.out_h {
                        let dst = &mut gi_ch[(y + ky) * g.in_w + kx..][..g.out_w];
                        axpy(w, &up_plane[y * g.out_w..(y + 1) * g.out_w], dst);
                    }
                }
            }
        }
    }
    gi
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * n..(p + 1) * n], out_row);
        }
    }
}

fn log_softmax_columns(logits: &[f64], k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for col in 0..n {
        let max = (0..k)
            .map(|r| logits[r * n + col])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..k).map(|r| (logits[r * n + col] - max).exp()).sum();
        let log_norm = max + sum.ln();
        for r in 0..k {
            out[r * n + col] = logits[r * n + col] - log_norm;
        }
    }
    out
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
