//! Patch-based segmentation network: a shared 3×3 convolutional trunk with
//! per-task 1×1 classification heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const KERNEL_SIZE: usize = 3;

/// Architecture description.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub in_channels: usize,
    /// Output width of each 3×3 conv + ReLU trunk layer.
    pub trunk: Vec<usize>,
    /// Head name → class count, in attachment order.
    pub heads: Vec<(String, usize)>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            in_channels: 2,
            trunk: vec![16, 16, 32],
            heads: vec![("taskA".into(), 4)],
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        if self.trunk.is_empty() || self.trunk.contains(&0) {
            return Err(Error::Config(
                "trunk needs at least one layer of positive width".into(),
            ));
        }
        for (i, (name, classes)) in self.heads.iter().enumerate() {
            if !(2..=255).contains(classes) {
                return Err(Error::Config(format!(
                    "head `{name}` needs between 2 and 255 classes, got {classes}"
                )));
            }
            if self.heads[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::DuplicateName(name.clone()));
            }
        }
        Ok(())
    }

    /// Pixels lost on each border: one per 3×3 trunk layer.
    pub fn margin(&self) -> usize {
        self.trunk.len() * (KERNEL_SIZE / 2)
    }

    pub fn feature_width(&self) -> usize {
        *self.trunk.last().expect("validated spec has a trunk")
    }

    pub fn head_classes(&self, head: &str) -> Option<usize> {
        self.heads.iter().find(|(n, _)| n == head).map(|&(_, c)| c)
    }
}

pub fn trunk_kernels(layer: usize) -> String {
    format!("trunk.{layer}.kernels")
}

pub fn trunk_bias(layer: usize) -> String {
    format!("trunk.{layer}.bias")
}

pub fn head_weights(head: &str) -> String {
    format!("head.{head}.weights")
}

pub fn head_bias(head: &str) -> String {
    format!("head.{head}.bias")
}

/// A network: its architecture plus the parameter store.
#[derive(Clone, Debug)]
pub struct SegNet {
    spec: NetworkSpec,
    params: ParamStore,
}

/// He-initialized network; trunk first, then heads in spec order.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<SegNet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let mut in_c = spec.in_channels;
    for (layer, &width) in spec.trunk.iter().enumerate() {
        let shape = [width, in_c, KERNEL_SIZE, KERNEL_SIZE];
        params.push(trunk_kernels(layer), he_normal(&shape, in_c * 9, &mut rng))?;
        params.push(trunk_bias(layer), Tensor::zeros(&[width]))?;
        in_c = width;
    }
    let mut net = SegNet {
        spec: NetworkSpec {
            heads: Vec::new(),
            ..spec.clone()
        },
        params,
    };
    for (name, classes) in &spec.heads {
        net.push_head(name, *classes, &mut rng)?;
    }
    Ok(net)
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches sample count")
}

impl SegNet {
    /// Reassembles a network from a spec and a matching parameter store.
    pub fn from_parts(spec: NetworkSpec, params: ParamStore) -> Result<Self> {
        spec.validate()?;
        let mut expected = Vec::new();
        let mut in_c = spec.in_channels;
        for (layer, &width) in spec.trunk.iter().enumerate() {
            expected.push((trunk_kernels(layer), vec![width, in_c, KERNEL_SIZE, KERNEL_SIZE]));
            expected.push((trunk_bias(layer), vec![width]));
            in_c = width;
        }
        for (name, classes) in &spec.heads {
            expected.push((head_weights(name), vec![*classes, in_c]));
            expected.push((head_bias(name), vec![*classes]));
        }
        let layout = params.layout();
        if layout.len() != expected.len() {
            return Err(Error::Contract(format!(
                "parameter store has {} entries, spec implies {}",
                layout.len(),
                expected.len()
            )));
        }
        for (have, (name, shape)) in layout.iter().zip(&expected) {
            if &have.name != name || &have.shape != shape {
                return Err(Error::Contract(format!(
                    "entry `{}` {:?} does not match expected `{name}` {shape:?}",
                    have.name, have.shape
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_parts(self) -> (NetworkSpec, ParamStore) {
        (self.spec, self.params)
    }

    pub fn has_head(&self, head: &str) -> bool {
        self.spec.head_classes(head).is_some()
    }

    /// Appends a freshly initialized head. Existing entries are untouched.
    pub fn attach_head(&mut self, head: &str, classes: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.push_head(head, classes, &mut rng)
    }

    fn push_head(&mut self, head: &str, classes: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.has_head(head) {
            return Err(Error::DuplicateName(head.to_string()));
        }
        let mut spec = self.spec.clone();
        spec.heads.push((head.to_string(), classes));
        spec.validate()?;
        let width = self.spec.feature_width();
        self.params
            .push(head_weights(head), he_normal(&[classes, width], width, rng))?;
        self.params.push(head_bias(head), Tensor::zeros(&[classes]))?;
        self.spec = spec;
        Ok(())
    }

    /// Output window side for an input side (valid convolutions shrink it).
    pub fn output_side(&self, input_side: usize) -> Option<usize> {
        input_side.checked_sub(2 * self.spec.margin()).filter(|&s| s > 0)
    }

    /// Trunk features `[F×H'×W']` for an input node `[C×H×W]`.
    pub fn trunk_node(&self, g: &mut Graph, input: NodeId) -> Result<NodeId> {
        let shape = g.value(input).shape().to_vec();
        if shape.len() != 3 || shape[0] != self.spec.in_channels {
            return Err(Error::Dimension(format!(
                "expected a [{}×H×W] patch, got {shape:?}",
                self.spec.in_channels
            )));
        }
        if self.output_side(shape[1]).is_none() || self.output_side(shape[2]).is_none() {
            return Err(Error::Dimension(format!(
                "patch {shape:?} is smaller than the {}-pixel receptive field",
                2 * self.spec.margin() + 1
            )));
        }
        let mut x = input;
        for layer in 0..self.spec.trunk.len() {
            let k = g.param(&trunk_kernels(layer), self.param(&trunk_kernels(layer)));
            let b = g.param(&trunk_bias(layer), self.param(&trunk_bias(layer)));
            let conv = g.conv2d(x, k, b)?;
            x = g.relu(conv);
        }
        Ok(x)
    }

    /// Per-pixel logits `[K×N]` (N = H'·W', row-major) for one head on trunk features.
    pub fn head_node(&self, g: &mut Graph, features: NodeId, head: &str) -> Result<NodeId> {
        if !self.has_head(head) {
            return Err(Error::UnknownHead(head.to_string()));
        }
        let fshape = g.value(features).shape().to_vec();
        let n = fshape[1..].iter().product();
        let flat = g.reshape(features, vec![fshape[0], n])?;
        let w = g.param(&head_weights(head), self.param(&head_weights(head)));
        let b = g.param(&head_bias(head), self.param(&head_bias(head)));
        let z = g.matmul(w, flat)?;
        g.add_bias(z, b)
    }

    /// Per-pixel logits `[K×N]` for `head` given an input node.
    pub fn logits_node(&self, g: &mut Graph, input: NodeId, head: &str) -> Result<NodeId> {
        if !self.has_head(head) {
            return Err(Error::UnknownHead(head.to_string()));
        }
        let features = self.trunk_node(g, input)?;
        self.head_node(g, features, head)
    }

    fn param(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("validated network is missing `{name}`"))
    }
}

/// Logits `[K×H'×W']` of `head` for one `[C×H×W]` patch.
pub fn forward_pass(net: &SegNet, patch: &Tensor, head: &str) -> Result<Tensor> {
    let mut g = Graph::new();
    let input = g.constant(patch.clone());
    let logits = net.logits_node(&mut g, input, head)?;
    let k = g.value(logits).shape()[0];
    let (h, w) = (patch.shape()[1], patch.shape()[2]);
    let m = net.spec().margin();
    g.value(logits).clone().reshape(vec![k, h - 2 * m, w - 2 * m])
}
