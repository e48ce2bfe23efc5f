//! Layer definitions, the VGG-19 encoder and the traced forward pass.

pub(crate) mod gemm;
mod ops;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub use ops::{avgpool_forward, conv_forward, conv_forward_nobias, maxpool_forward, relu, IndexMap};

/// Spatial kernel size of every convolution (VGG uses 3x3, stride 1, pad 1).
pub const KERNEL: usize = gemm::KERNEL;
/// Max-pool window and stride.
pub const POOL: usize = 2;

/// Image channel count every network consumes.
pub const INPUT_CHANNELS: usize = 3;

pub const DEFAULT_RESOLUTION: usize = 224;

#[derive(Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(out, in, 3, 3)` row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl fmt::Debug for ConvLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvLayer")
            .field("name", &self.name)
            .field("in_channels", &self.in_channels)
            .field("out_channels", &self.out_channels)
            .finish_non_exhaustive()
    }
}

impl ConvLayer {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let name = name.into();
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid(format!("{name}: zero channel count")));
        }
        let expect = out_channels * in_channels * KERNEL * KERNEL;
        if weights.len() != expect {
            return Err(Error::shape(
                format!("{name} weights of {expect} values"),
                weights.len(),
            ));
        }
        if bias.len() != out_channels {
            return Err(Error::shape(
                format!("{name} bias of {out_channels} values"),
                bias.len(),
            ));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{name}: non-finite parameter")));
        }
        Ok(ConvLayer {
            name,
            in_channels,
            out_channels,
            weights,
            bias,
        })
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, KERNEL, KERNEL]
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_channels + i) * KERNEL + ky) * KERNEL + kx]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolLayer {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu { name: String },
    Pool(PoolLayer),
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv(c) => &c.name,
            Layer::Relu { name } => name,
            Layer::Pool(p) => &p.name,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::Relu { .. } => LayerKind::Relu,
            Layer::Pool(_) => LayerKind::Pool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Relu,
    Pool,
}

impl LayerKind {
    /// Classifies a layer name by prefix: `conv*`, `relu*`, `pool*`.
    pub fn from_name(name: &str) -> Option<Self> {
        if name.starts_with("conv") {
            Some(LayerKind::Conv)
        } else if name.starts_with("relu") {
            Some(LayerKind::Relu)
        } else if name.starts_with("pool") {
            Some(LayerKind::Pool)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// The 16 convolutions of VGG-19 in blocks of 2,2,4,4,4.
    Vgg19Encoder,
    /// Any consistent conv / relu / pool stack; used for toy networks.
    Custom,
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Vgg19Encoder => "vgg19-encoder",
            Architecture::Custom => "custom",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "vgg19-encoder" => Some(Architecture::Vgg19Encoder),
            "custom" => Some(Architecture::Custom),
            _ => None,
        }
    }
}

/// Topology of one layer without its parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerPlan {
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
    },
    Relu(String),
    Pool(String),
}

impl LayerPlan {
    pub fn name(&self) -> &str {
        match self {
            LayerPlan::Conv { name, .. } | LayerPlan::Relu(name) | LayerPlan::Pool(name) => name,
        }
    }
}

pub const VGG19_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)];

/// `conv1_1, relu1_1, conv1_2, relu1_2, pool1, ..., conv5_4, relu5_4, pool5`.
pub fn vgg19_plan() -> Vec<LayerPlan> {
    let mut plan = Vec::with_capacity(37);
    let mut in_ch = INPUT_CHANNELS;
    for (b, &(convs, width)) in VGG19_BLOCKS.iter().enumerate() {
        for i in 1..=convs {
            plan.push(LayerPlan::Conv {
                name: format!("conv{}_{}", b + 1, i),
                in_channels: in_ch,
                out_channels: width,
            });
            plan.push(LayerPlan::Relu(format!("relu{}_{}", b + 1, i)));
            in_ch = width;
        }
        plan.push(LayerPlan::Pool(format!("pool{}", b + 1)));
    }
    plan
}

/// An immutable, validated layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    architecture: Architecture,
    layers: Vec<Layer>,
    /// `(pool name, layer index)` in network order.
    checkpoints: Vec<(String, usize)>,
}

impl NetworkSpec {
    pub fn new(architecture: Architecture, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        let mut seen = std::collections::HashSet::new();
        let mut channels = INPUT_CHANNELS;
        let mut checkpoints = Vec::new();
        for (idx, layer) in layers.iter().enumerate() {
            if !seen.insert(layer.name()) {
                return Err(Error::invalid(format!("duplicate layer name `{}`", layer.name())));
            }
            match layer {
                Layer::Conv(c) => {
                    if c.in_channels != channels {
                        return Err(Error::shape(
                            format!("{} in_channels = {channels}", c.name),
                            c.in_channels,
                        ));
                    }
                    channels = c.out_channels;
                }
                Layer::Relu { .. } => {}
                Layer::Pool(p) => {
                    let expect = format!("pool{}", checkpoints.len() + 1);
                    if p.name != expect {
                        return Err(Error::invalid(format!(
                            "pooling layer `{}` out of order, expected `{expect}`",
                            p.name
                        )));
                    }
                    checkpoints.push((p.name.clone(), idx));
                }
            }
        }
        let net = NetworkSpec {
            architecture,
            layers,
            checkpoints,
        };
        if architecture == Architecture::Vgg19Encoder {
            let plan = vgg19_plan();
            if net.plan() != plan {
                return Err(Error::invalid(
                    "layer stack does not match the vgg19-encoder architecture",
                ));
            }
        }
        Ok(net)
    }

    /// Builds a network from a topology, asking `params` for each conv's
    /// `(weights, bias)` given `(name, in_channels, out_channels)`.
    pub fn from_plan(
        architecture: Architecture,
        plan: &[LayerPlan],
        mut params: impl FnMut(&str, usize, usize) -> (Vec<f32>, Vec<f32>),
    ) -> Result<Self> {
        let layers = plan
            .iter()
            .map(|p| match p {
                LayerPlan::Conv {
                    name,
                    in_channels,
                    out_channels,
                } => {
                    let (w, b) = params(name, *in_channels, *out_channels);
                    ConvLayer::new(name.clone(), *in_channels, *out_channels, w, b).map(Layer::Conv)
                }
                LayerPlan::Relu(name) => Ok(Layer::Relu { name: name.clone() }),
                LayerPlan::Pool(name) => Ok(Layer::Pool(PoolLayer { name: name.clone() })),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(architecture, layers)
    }

    /// He-uniform weights and small uniform biases from a fixed seed.
    pub fn random(architecture: Architecture, plan: &[LayerPlan], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_plan(architecture, plan, |_, i, o| random_params(&mut rng, i, o))
    }

    pub fn vgg19_random(seed: u64) -> Result<Self> {
        Self::random(Architecture::Vgg19Encoder, &vgg19_plan(), seed)
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn plan(&self) -> Vec<LayerPlan> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => LayerPlan::Conv {
                    name: c.name.clone(),
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                },
                Layer::Relu { name } => LayerPlan::Relu(name.clone()),
                Layer::Pool(p) => LayerPlan::Pool(p.name.clone()),
            })
            .collect()
    }

    pub fn checkpoints(&self) -> impl Iterator<Item = &str> {
        self.checkpoints.iter().map(|(n, _)| n.as_str())
    }

    /// Layer index of pooling checkpoint `name`.
    pub fn checkpoint(&self, name: &str) -> Result<usize> {
        self.checkpoints
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, i)| i)
            .ok_or_else(|| Error::UnknownCheckpoint(name.to_string()))
    }

    /// Number of pooling stages at or before layer `idx`.
    pub fn pool_depth(&self, idx: usize) -> usize {
        self.layers[..=idx]
            .iter()
            .filter(|l| matches!(l, Layer::Pool(_)))
            .count()
    }

    /// Channel count entering layer `idx` (i.e. produced by layer `idx - 1`).
    fn channels_before(&self, idx: usize) -> usize {
        self.layers[..idx]
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Conv(c) => Some(c.out_channels),
                _ => None,
            })
            .unwrap_or(INPUT_CHANNELS)
    }

    /// Channel count of layer `idx`'s output.
    pub fn channels_at(&self, idx: usize) -> usize {
        self.channels_before(idx + 1)
    }

    /// Checks that a square `size`-pixel image can be pooled through layer `idx`.
    pub fn check_resolution(&self, size: usize, idx: usize) -> Result<()> {
        let depth = self.pool_depth(idx);
        let div = POOL.pow(depth as u32);
        if size == 0 || !size.is_multiple_of(div) {
            return Err(Error::invalid(format!(
                "resolution {size} must be a positive multiple of {div} to reach `{}`",
                self.layers[idx].name()
            )));
        }
        Ok(())
    }

    /// Output shape of layer `idx` for a square `size` input.
    pub fn shape_at(&self, idx: usize, size: usize) -> Result<Shape> {
        if idx >= self.layers.len() {
            return Err(Error::invalid(format!("layer index {idx} out of range")));
        }
        self.check_resolution(size, idx)?;
        let side = size / POOL.pow(self.pool_depth(idx) as u32);
        Ok(Shape::new(self.channels_at(idx), side, side))
    }

    pub fn pooled_shape(&self, pool: &str, size: usize) -> Result<Shape> {
        self.shape_at(self.checkpoint(pool)?, size)
    }
}

fn random_params(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize) -> (Vec<f32>, Vec<f32>) {
    let fan_in = (in_ch * KERNEL * KERNEL) as f32;
    let bound = (6.0 / fan_in).sqrt();
    let w = (0..out_ch * in_ch * KERNEL * KERNEL)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    let b = (0..out_ch).map(|_| rng.gen_range(-0.05..0.05)).collect();
    (w, b)
}

/// Every layer output of a forward pass, plus argmax maps for each pooling layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    input_size: usize,
    outputs: Vec<Tensor>,
    indices: Vec<Option<IndexMap>>,
}

impl ForwardTrace {
    pub fn input_size(&self) -> usize {
        self.input_size
    }

    /// Layer outputs `0..=upto`.
    pub fn outputs(&self) -> &[Tensor] {
        &self.outputs
    }

    pub fn output(&self, idx: usize) -> Option<&Tensor> {
        self.outputs.get(idx)
    }

    pub fn last(&self) -> &Tensor {
        self.outputs.last().expect("trace is never empty")
    }

    /// Argmax map recorded by the pooling layer at `idx`.
    pub fn indices(&self, idx: usize) -> Option<&IndexMap> {
        self.indices.get(idx).and_then(Option::as_ref)
    }
}

fn check_image(net: &NetworkSpec, image: &Tensor, upto: usize) -> Result<()> {
    let s = image.shape();
    if s.channels != INPUT_CHANNELS {
        return Err(Error::shape(
            format!("{INPUT_CHANNELS}-channel image"),
            s,
        ));
    }
    if s.height != s.width {
        return Err(Error::invalid(format!("image must be square, got {s}")));
    }
    net.check_resolution(s.height, upto)
}

fn apply(layer: &Layer, x: &Tensor) -> Result<(Tensor, Option<IndexMap>)> {
    Ok(match layer {
        Layer::Conv(c) => (conv_forward(x, c)?, None),
        Layer::Relu { .. } => (relu(x), None),
        Layer::Pool(p) => {
            let (t, idx) = maxpool_forward(x, p)?;
            (t, Some(idx))
        }
    })
}

/// Runs `image` through every layer up to and including pooling checkpoint `upto`.
pub fn forward(net: &NetworkSpec, image: &Tensor, upto: &str) -> Result<ForwardTrace> {
    let end = net.checkpoint(upto)?;
    check_image(net, image, end)?;
    let mut outputs = Vec::with_capacity(end + 1);
    let mut indices = Vec::with_capacity(end + 1);
    for layer in &net.layers()[..=end] {
        let (out, idx) = apply(layer, outputs.last().unwrap_or(image))?;
        outputs.push(out);
        indices.push(idx);
    }
    Ok(ForwardTrace {
        input_size: image.height(),
        outputs,
        indices,
    })
}

/// Like [`forward`] but keeps only the checkpoint's output.
pub fn forward_output(net: &NetworkSpec, image: &Tensor, upto: &str) -> Result<Tensor> {
    let end = net.checkpoint(upto)?;
    check_image(net, image, end)?;
    let mut x = image.clone();
    for layer in &net.layers()[..=end] {
        x = apply(layer, &x)?.0;
    }
    Ok(x)
}
