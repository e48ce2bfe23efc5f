use super::{gemm, ConvLayer, PoolLayer, POOL};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Argmax positions recorded by a 2x2 max-pool.
///
/// Each entry is the row-major offset (0..4) of the winning element within
/// its window: `0 1 / 2 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    shape: Shape,
    idx: Vec<u8>,
}

impl IndexMap {
    pub fn new(shape: Shape, idx: Vec<u8>) -> Result<Self> {
        if idx.len() != shape.len() {
            return Err(Error::shape(shape.len(), idx.len()));
        }
        if idx.iter().any(|&k| k >= 4) {
            return Err(Error::invalid("pool index out of window range"));
        }
        Ok(IndexMap { shape, idx })
    }

    /// Shape of the pooled grid this map describes.
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.idx
    }

    pub fn get(&self, c: usize, r: usize, w: usize) -> u8 {
        self.idx[(c * self.shape.height + r) * self.shape.width + w]
    }
}

fn check_conv_input(input: &Tensor, layer: &ConvLayer) -> Result<()> {
    if input.channels() != layer.in_channels {
        return Err(Error::shape(
            format!("{} input channels for {}", layer.in_channels, layer.name),
            input.channels(),
        ));
    }
    Ok(())
}

fn conv(input: &Tensor, layer: &ConvLayer, bias: bool) -> Result<Tensor> {
    check_conv_input(input, layer)?;
    let s = input.shape();
    let data = gemm::conv3x3(
        input.data(),
        s.channels,
        s.height,
        s.width,
        &layer.weights,
        bias.then_some(layer.bias.as_slice()),
        layer.out_channels,
    );
    Ok(Tensor::from_raw(
        Shape::new(layer.out_channels, s.height, s.width),
        data,
    ))
}

/// 3x3 cross-correlation, zero padding 1, stride 1, plus bias.
pub fn conv_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    conv(input, layer, true)
}

/// The linear part of [`conv_forward`].
pub fn conv_forward_nobias(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    conv(input, layer, false)
}

pub fn relu(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_raw(t.shape(), data)
}

fn pooled_shape(t: &Tensor) -> Result<Shape> {
    let s = t.shape();
    if !s.height.is_multiple_of(POOL) || !s.width.is_multiple_of(POOL) {
        return Err(Error::invalid(format!(
            "2x2 pooling needs even spatial dims, got {s}"
        )));
    }
    Ok(Shape::new(s.channels, s.height / POOL, s.width / POOL))
}

/// 2x2 / stride 2 max-pool. Ties go to the first element in row-major window order.
pub fn maxpool_forward(t: &Tensor, _layer: &PoolLayer) -> Result<(Tensor, IndexMap)> {
    let out_shape = pooled_shape(t)?;
    let mut out = Vec::with_capacity(out_shape.len());
    let mut idx = Vec::with_capacity(out_shape.len());
    for c in 0..out_shape.channels {
        for r in 0..out_shape.height {
            for w in 0..out_shape.width {
                let mut best = t.get(c, 2 * r, 2 * w);
                let mut arg = 0u8;
                for k in 1..4u8 {
                    let v = t.get(c, 2 * r + (k as usize) / 2, 2 * w + (k as usize) % 2);
                    if v > best {
                        best = v;
                        arg = k;
                    }
                }
                out.push(best);
                idx.push(arg);
            }
        }
    }
    Ok((
        Tensor::from_raw(out_shape, out),
        IndexMap {
            shape: out_shape,
            idx,
        },
    ))
}

/// 2x2 / stride 2 mean-pool; the linearized stand-in for max-pooling.
pub fn avgpool_forward(t: &Tensor) -> Result<Tensor> {
    let out_shape = pooled_shape(t)?;
    Tensor::from_fn(out_shape, |c, r, w| {
        let s = t.get(c, 2 * r, 2 * w)
            + t.get(c, 2 * r, 2 * w + 1)
            + t.get(c, 2 * r + 1, 2 * w)
            + t.get(c, 2 * r + 1, 2 * w + 1);
        s * 0.25
    })
}
