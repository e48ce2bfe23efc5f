//! Clamped-neuron back-projection.
//!
//! A [`SparseSeed`] names one neuron at a pooling checkpoint. Its pooled map
//! is all zeros except the constant `c` at the seeded site. The map is then
//! walked back through the network layer by layer:
//!
//! - pooling layers are undone by upsampling, either by repeating each value
//!   over its 2x2 window ([`UnpoolMode::Repeat`], no image needed) or by
//!   scattering to the argmax positions of a recorded forward pass
//!   ([`UnpoolMode::Index`]);
//! - ReLU layers apply ReLU again;
//! - conv layers apply [`deconv`], the exact adjoint of the bias-free
//!   cross-correlation.
//!
//! Biases never enter the reverse path, so the whole pipeline is positively
//! homogeneous in `c`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{gemm, relu, ConvLayer, ForwardTrace, IndexMap, Layer, NetworkSpec, POOL};
use crate::tensor::{Shape, Tensor};

/// The six constants of the propagation sweep, ascending.
pub const DEFAULT_SWEEP: [f32; 6] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Position {
    /// `(h / 2, w / 2)` of the pooled map.
    #[default]
    Center,
    At { row: usize, col: usize },
}

impl Position {
    pub fn resolve(&self, height: usize, width: usize) -> (usize, usize) {
        match *self {
            Position::Center => (height / 2, width / 2),
            Position::At { row, col } => (row, col),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSeed {
    pub pool_layer: String,
    pub channel: usize,
    pub position: Position,
    pub c: f32,
}

impl SparseSeed {
    pub fn new(pool_layer: impl Into<String>, channel: usize) -> Self {
        SparseSeed {
            pool_layer: pool_layer.into(),
            channel,
            position: Position::Center,
            c: 1.0,
        }
    }

    pub fn at(mut self, row: usize, col: usize) -> Self {
        self.position = Position::At { row, col };
        self
    }

    pub fn with_c(mut self, c: f32) -> Self {
        self.c = c;
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub enum UnpoolMode<'a> {
    /// Nearest-neighbour upsampling; works without any input image.
    Repeat,
    /// Scatter to the argmax positions recorded in a forward trace.
    Index(&'a ForwardTrace),
}

fn check_c(c: f32) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::invalid(format!("seed constant must be > 0, got {c}")));
    }
    Ok(())
}

/// The clamped pooled map: zeros except `c` at `(channel, position)`.
pub fn make_seed_map(seed: &SparseSeed, net: &NetworkSpec, input_size: usize) -> Result<Tensor> {
    check_c(seed.c)?;
    let shape = net.pooled_shape(&seed.pool_layer, input_size)?;
    if seed.channel >= shape.channels {
        return Err(Error::invalid(format!(
            "channel {} out of range: `{}` has {} channels",
            seed.channel, seed.pool_layer, shape.channels
        )));
    }
    let (row, col) = seed.position.resolve(shape.height, shape.width);
    if row >= shape.height || col >= shape.width {
        return Err(Error::invalid(format!(
            "position ({row},{col}) outside {}x{} map of `{}`",
            shape.height, shape.width, seed.pool_layer
        )));
    }
    let mut map = Tensor::zeros(shape)?;
    map.set(seed.channel, row, col, seed.c);
    Ok(map)
}

/// `out[c, i, j] = t[c, i / 2, j / 2]`.
pub fn unpool_repeat(t: &Tensor) -> Tensor {
    let s = t.shape();
    let out_shape = Shape::new(s.channels, s.height * POOL, s.width * POOL);
    let mut out = Vec::with_capacity(out_shape.len());
    for c in 0..s.channels {
        let plane = t.channel(c);
        for i in 0..out_shape.height {
            let row = &plane[(i / POOL) * s.width..][..s.width];
            for &v in row {
                out.extend_from_slice(&[v, v]);
            }
        }
    }
    Tensor::from_raw(out_shape, out)
}

/// Places each pooled value at its recorded argmax; every other cell is zero.
pub fn unpool_index(t: &Tensor, indices: &IndexMap) -> Result<Tensor> {
    if t.shape() != indices.shape() {
        return Err(Error::shape(indices.shape(), t.shape()));
    }
    let s = t.shape();
    let mut out = Tensor::new_zeros(s.channels, s.height * POOL, s.width * POOL)?;
    for c in 0..s.channels {
        for r in 0..s.height {
            for w in 0..s.width {
                let k = indices.get(c, r, w) as usize;
                out.set(c, POOL * r + k / POOL, POOL * w + k % POOL, t.get(c, r, w));
            }
        }
    }
    Ok(out)
}

/// Transposed convolution: the adjoint of [`conv_forward_nobias`](crate::nn::conv_forward_nobias).
///
/// Maps an `(out_channels, h, w)` map to `(in_channels, h, w)`.
pub fn deconv(o: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    if o.channels() != layer.out_channels {
        return Err(Error::shape(
            format!("{} channels for deconv of {}", layer.out_channels, layer.name),
            o.channels(),
        ));
    }
    let s = o.shape();
    let data = gemm::conv3x3_adjoint(
        o.data(),
        s.channels,
        s.height,
        s.width,
        &layer.weights,
        layer.in_channels,
    );
    Ok(Tensor::from_raw(
        Shape::new(layer.in_channels, s.height, s.width),
        data,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Config {
    Deconvnet,
    /// ReLU -> identity, unpooling -> repeat / 4 (adjoint of mean-pooling).
    Linearized,
}

fn run(
    net: &NetworkSpec,
    seed: &SparseSeed,
    mode: UnpoolMode<'_>,
    input_size: usize,
    config: Config,
) -> Result<Tensor> {
    let top = net.checkpoint(&seed.pool_layer)?;
    if let UnpoolMode::Index(trace) = mode {
        if trace.input_size() != input_size || trace.outputs().len() <= top {
            return Err(Error::invalid(format!(
                "forward trace ({}px, {} layers) does not cover `{}` at {input_size}px",
                trace.input_size(),
                trace.outputs().len(),
                seed.pool_layer
            )));
        }
    }
    let mut x = make_seed_map(seed, net, input_size)?;
    for (idx, layer) in net.layers()[..=top].iter().enumerate().rev() {
        x = match layer {
            Layer::Pool(p) => match (mode, config) {
                (_, Config::Linearized) => unpool_repeat(&x).scale(0.25),
                (UnpoolMode::Repeat, _) => unpool_repeat(&x),
                (UnpoolMode::Index(trace), _) => {
                    let indices = trace.indices(idx).ok_or_else(|| {
                        Error::invalid(format!("trace has no pool indices for `{}`", p.name))
                    })?;
                    unpool_index(&x, indices)?
                }
            },
            Layer::Relu { .. } => match config {
                Config::Deconvnet => relu(&x),
                Config::Linearized => x,
            },
            Layer::Conv(c) => deconv(&x, c)?,
        };
    }
    Ok(x)
}

/// Projects a clamped neuron back to a `(3, input_size, input_size)` image-space pattern.
pub fn backproject(
    net: &NetworkSpec,
    seed: &SparseSeed,
    mode: UnpoolMode<'_>,
    input_size: usize,
) -> Result<Tensor> {
    run(net, seed, mode, input_size, Config::Deconvnet)
}

/// Reverse pass of the linearized network (identity nonlinearity, mean-pooling).
///
/// Divided by `c`, the result is the input gradient of the seeded neuron in
/// that network. Exists for gradient checks only.
#[doc(hidden)]
pub fn backproject_linearized(net: &NetworkSpec, seed: &SparseSeed, input_size: usize) -> Result<Tensor> {
    run(net, seed, UnpoolMode::Repeat, input_size, Config::Linearized)
}

/// Back-projects many seeds; results are returned in input order.
pub fn backproject_many(
    net: &NetworkSpec,
    seeds: &[SparseSeed],
    mode: UnpoolMode<'_>,
    input_size: usize,
) -> Result<Vec<Tensor>> {
    seeds
        .par_iter()
        .map(|s| backproject(net, s, mode, input_size))
        .collect()
}

/// One pattern per constant in `c_values`, all seeded like `template`.
pub fn sweep(
    net: &NetworkSpec,
    template: &SparseSeed,
    c_values: &[f32],
    mode: UnpoolMode<'_>,
    input_size: usize,
) -> Result<Vec<Tensor>> {
    if c_values.is_empty() {
        return Err(Error::invalid("sweep needs at least one constant"));
    }
    for &c in c_values {
        check_c(c)?;
    }
    let seeds: Vec<_> = c_values
        .iter()
        .map(|&c| template.clone().with_c(c))
        .collect();
    backproject_many(net, &seeds, mode, input_size)
}

/// Inclusive `(row0, row1, col0, col1)` image-space box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl PixelBox {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..=self.row1).contains(&row) && (self.col0..=self.col1).contains(&col)
    }
}

/// Image-space region a seeded neuron can reach, clipped to the image.
pub fn receptive_box(net: &NetworkSpec, seed: &SparseSeed, input_size: usize) -> Result<PixelBox> {
    let top = net.checkpoint(&seed.pool_layer)?;
    let shape = net.shape_at(top, input_size)?;
    let (r, c) = seed.position.resolve(shape.height, shape.width);
    let (mut r0, mut r1, mut c0, mut c1) = (r as isize, r as isize, c as isize, c as isize);
    let mut side = shape.height as isize;
    let half = (crate::nn::KERNEL / 2) as isize;
    for layer in net.layers()[..=top].iter().rev() {
        match layer {
            Layer::Pool(_) => {
                let p = POOL as isize;
                r0 *= p;
                c0 *= p;
                r1 = r1 * p + p - 1;
                c1 = c1 * p + p - 1;
                side *= p;
            }
            Layer::Conv(_) => {
                r0 = (r0 - half).max(0);
                c0 = (c0 - half).max(0);
                r1 = (r1 + half).min(side - 1);
                c1 = (c1 + half).min(side - 1);
            }
            Layer::Relu { .. } => {}
        }
    }
    Ok(PixelBox {
        row0: r0 as usize,
        row1: r1 as usize,
        col0: c0 as usize,
        col1: c1 as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{maxpool_forward, Architecture, LayerPlan, PoolLayer};

    fn one_block(ch: usize) -> Vec<LayerPlan> {
        vec![
            LayerPlan::Conv {
                name: "conv1_1".into(),
                in_channels: 3,
                out_channels: ch,
            },
            LayerPlan::Relu("relu1_1".into()),
            LayerPlan::Pool("pool1".into()),
        ]
    }

    fn identity_net() -> NetworkSpec {
        NetworkSpec::from_plan(Architecture::Custom, &one_block(3), |_, i, o| {
            let mut w = vec![0.0; o * i * 9];
            for c in 0..o {
                w[(c * i + c) * 9 + 4] = 1.0;
            }
            (w, vec![0.3; o])
        })
        .unwrap()
    }

    #[test]
    fn seed_map_construction() {
        let net = NetworkSpec::from_plan(
            Architecture::Vgg19Encoder,
            &crate::nn::vgg19_plan(),
            |_, i, o| (vec![0.0; o * i * 9], vec![0.0; o]),
        )
        .unwrap();
        let map = make_seed_map(&SparseSeed::new("pool5", 0), &net, 224).unwrap();
        assert_eq!(map.shape(), Shape::new(512, 7, 7));
        assert_eq!(map.get(0, 3, 3), 1.0);
        assert_eq!(map.sum(), 1.0);
        let m = make_seed_map(&SparseSeed::new("pool2", 5).with_c(2.5), &net, 224).unwrap();
        assert_eq!(m.sum(), 2.5);

        assert!(make_seed_map(&SparseSeed::new("pool1", 63), &net, 224).is_ok());
        assert!(make_seed_map(&SparseSeed::new("pool1", 64), &net, 224).is_err());
        assert!(make_seed_map(&SparseSeed::new("pool5", 0).at(7, 0), &net, 224).is_err());
        assert!(make_seed_map(&SparseSeed::new("pool5", 0).with_c(0.0), &net, 224).is_err());
        assert!(make_seed_map(&SparseSeed::new("pool5", 0).with_c(-1.0), &net, 224).is_err());
    }

    #[test]
    fn repeat_upsampling() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1), vec![5.0]).unwrap();
        assert_eq!(unpool_repeat(&t).data(), &[5.0; 4]);

        let mut s = Tensor::new_zeros(2, 3, 3).unwrap();
        s.set(1, 2, 1, 7.0);
        let up = unpool_repeat(&s);
        assert_eq!(up.shape(), Shape::new(2, 6, 6));
        for c in 0..2 {
            for i in 0..6 {
                for j in 0..6 {
                    let inside = c == 1 && (4..6).contains(&i) && (2..4).contains(&j);
                    assert_eq!(up.get(c, i, j), if inside { 7.0 } else { 0.0 });
                }
            }
        }
        assert_eq!(up.sum(), 4.0 * s.sum());
    }

    #[test]
    fn index_unpooling() {
        let p = Tensor::from_vec(Shape::new(1, 1, 1), vec![4.0]).unwrap();
        let idx = IndexMap::new(Shape::new(1, 1, 1), vec![3]).unwrap();
        assert_eq!(unpool_index(&p, &idx).unwrap().data(), &[0.0, 0.0, 0.0, 4.0]);
        let wrong = IndexMap::new(Shape::new(1, 2, 1), vec![0, 0]).unwrap();
        assert!(unpool_index(&p, &wrong).is_err());

        let x = Tensor::from_vec(Shape::new(1, 2, 4), vec![1.0, 5.0, 2.0, 2.0, 3.0, 0.0, 9.0, 1.0])
            .unwrap();
        let (p, idx) = maxpool_forward(&x, &PoolLayer { name: "pool1".into() }).unwrap();
        let up = unpool_index(&p, &idx).unwrap();
        assert_eq!(up.data(), &[0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 9.0, 0.0]);
    }

    #[test]
    fn identity_deconv() {
        let net = identity_net();
        let conv = net.convs().next().unwrap();
        let y = Tensor::from_fn(Shape::new(3, 4, 4), |c, r, w| (c * 16 + r * 4 + w) as f32).unwrap();
        assert_eq!(deconv(&y, conv).unwrap(), y);
        assert!(deconv(&Tensor::new_zeros(2, 4, 4).unwrap(), conv).is_err());
    }

    #[test]
    fn identity_net_backprojects_to_block() {
        let net = identity_net();
        let seed = SparseSeed::new("pool1", 1).at(1, 2);
        let pattern = backproject(&net, &seed, UnpoolMode::Repeat, 8).unwrap();
        assert_eq!(pattern.shape(), Shape::new(3, 8, 8));
        for c in 0..3 {
            for i in 0..8 {
                for j in 0..8 {
                    let inside = c == 1 && (2..4).contains(&i) && (4..6).contains(&j);
                    assert_eq!(pattern.get(c, i, j), if inside { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn index_mode_requires_matching_trace() {
        let net = identity_net();
        let img = Tensor::from_fn(Shape::new(3, 8, 8), |c, r, w| ((c + r * 3 + w * 5) % 7) as f32)
            .unwrap();
        let trace = crate::nn::forward(&net, &img, "pool1").unwrap();
        let seed = SparseSeed::new("pool1", 0).at(0, 0);
        assert!(backproject(&net, &seed, UnpoolMode::Index(&trace), 16).is_err());
        let p = backproject(&net, &seed, UnpoolMode::Index(&trace), 8).unwrap();
        // Exactly one pixel lit: the argmax of the top-left window in channel 0.
        assert_eq!(p.data().iter().filter(|&&v| v != 0.0).count(), 1);
        let k = trace.indices(2).unwrap().get(0, 0, 0) as usize;
        assert_eq!(p.get(0, k / 2, k % 2), 1.0);
    }

    #[test]
    fn sweep_rejects_bad_constants() {
        let net = identity_net();
        let seed = SparseSeed::new("pool1", 0);
        assert!(sweep(&net, &seed, &[], UnpoolMode::Repeat, 8).is_err());
        assert!(sweep(&net, &seed, &[1.0, 0.0], UnpoolMode::Repeat, 8).is_err());
        assert!(sweep(&net, &seed, &[1.0, -0.5], UnpoolMode::Repeat, 8).is_err());
        let panels = sweep(&net, &seed, &DEFAULT_SWEEP, UnpoolMode::Repeat, 8).unwrap();
        assert_eq!(panels.len(), 6);
    }

    #[test]
    fn receptive_box_one_block() {
        let net = identity_net();
        let b = receptive_box(&net, &SparseSeed::new("pool1", 0).at(2, 0), 8).unwrap();
        assert_eq!(
            b,
            PixelBox {
                row0: 3,
                row1: 6,
                col0: 0,
                col1: 2
            }
        );
    }
}
