//! Image output: binary PGM/PPM, montage grids, and a raw float tensor file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Gray level used for padding and empty grid cells.
pub const PAD_VALUE: f32 = 0.5;
pub const DEFAULT_GRID: (usize, usize) = (8, 8);
pub const DEFAULT_PADDING: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary graymap, `P5`, one channel.
    Pgm,
    /// Binary pixmap, `P6`, three channels.
    Ppm,
}

impl ImageFormat {
    pub fn for_channels(channels: usize) -> Result<Self> {
        match channels {
            1 => Ok(ImageFormat::Pgm),
            3 => Ok(ImageFormat::Ppm),
            n => Err(Error::invalid(format!("no image format for {n} channels"))),
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Ppm => "ppm",
        }
    }
}

#[inline]
fn quantize(v: f32) -> u8 {
    // round half up
    (v as f64 * 255.0 + 0.5).floor() as u8
}

/// Encodes a `[0, 1]` tensor as binary PGM (1 channel) or PPM (3 channels), maxval 255.
pub fn to_image_bytes(t: &Tensor, format: ImageFormat) -> Result<Vec<u8>> {
    let s = t.shape();
    let (magic, channels) = match format {
        ImageFormat::Pgm => ("P5", 1),
        ImageFormat::Ppm => ("P6", 3),
    };
    if s.channels != channels {
        return Err(Error::shape(
            format!("{channels}-channel tensor for {magic}"),
            s,
        ));
    }
    if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!(
            "pixel value {v} outside [0, 1]; normalize first"
        )));
    }
    let mut out = format!("{magic}\n{} {}\n255\n", s.width, s.height).into_bytes();
    out.reserve(s.len());
    let plane = s.plane();
    for p in 0..plane {
        for c in 0..channels {
            out.push(quantize(t.data()[c * plane + p]));
        }
    }
    Ok(out)
}

/// Writes `t` (already in `[0, 1]`) to `path` as PGM or PPM by channel count.
pub fn write_image(t: &Tensor, path: &Path) -> Result<()> {
    let bytes = to_image_bytes(t, ImageFormat::for_channels(t.channels())?)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Decodes 8-bit binary PGM/PPM into a `[0, 1]` tensor.
pub fn from_image_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut header = [0usize; 3];
    let channels = match next_token(bytes, &mut pos) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::invalid("not a binary PGM/PPM file")),
    };
    for h in &mut header {
        *h = next_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::invalid("bad PGM/PPM header"))?;
    }
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(Error::invalid(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let shape = Shape::new(channels, height, width);
    let raster = bytes
        .get(pos..)
        .filter(|r| r.len() == shape.len())
        .ok_or_else(|| Error::invalid("PGM/PPM raster length does not match header"))?;
    let plane = shape.plane();
    let mut data = vec![0.0f32; shape.len()];
    for (i, &b) in raster.iter().enumerate() {
        data[(i % channels) * plane + i / channels] = b as f32 / 255.0;
    }
    Tensor::from_vec(shape, data)
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_image_bytes(&bytes)
}

/// Magic of the raw tensor file: `RFT1`, then `u32` channels, height, width
/// and the little-endian `f32` data, all little-endian.
pub const RAW_MAGIC: &[u8; 4] = b"RFT1";

pub fn to_raw_bytes(t: &Tensor) -> Vec<u8> {
    let s = t.shape();
    let mut out = Vec::with_capacity(16 + 4 * s.len());
    out.extend_from_slice(RAW_MAGIC);
    for d in [s.channels, s.height, s.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_raw_bytes(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
        return Err(Error::invalid("not an RFT1 tensor file"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = Shape::new(dim(0), dim(1), dim(2));
    let body = &bytes[16..];
    let expect = (shape.channels as u64) * (shape.height as u64) * (shape.width as u64) * 4;
    if body.len() as u64 != expect {
        return Err(Error::invalid(format!(
            "RFT1 body is {} bytes, header {shape} needs {expect}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Loads a pattern from an `RFT1` file or a PGM/PPM image, by content.
pub fn read_pattern(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(RAW_MAGIC) {
        from_raw_bytes(&bytes)
    } else {
        from_image_bytes(&bytes)
    }
}

/// Tiles laid out row-major on a `rows x cols` grid with uniform padding.
#[derive(Debug, Clone)]
pub struct Montage {
    pub tiles: Vec<Tensor>,
    pub rows: usize,
    pub cols: usize,
    pub padding_px: usize,
    pub pad_value: f32,
}

impl Montage {
    pub fn new(tiles: Vec<Tensor>, rows: usize, cols: usize, padding_px: usize) -> Self {
        Montage {
            tiles,
            rows,
            cols,
            padding_px,
            pad_value: PAD_VALUE,
        }
    }

    /// Top-left pixel of grid cell `(r, c)` given tile size `(h, w)`.
    pub fn offset(&self, r: usize, c: usize, tile: Shape) -> (usize, usize) {
        (
            r * (tile.height + self.padding_px),
            c * (tile.width + self.padding_px),
        )
    }

    pub fn render(&self) -> Result<Tensor> {
        let first = self
            .tiles
            .first()
            .ok_or_else(|| Error::invalid("montage needs at least one tile"))?;
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("montage grid must be at least 1x1"));
        }
        if self.tiles.len() > self.rows * self.cols {
            return Err(Error::invalid(format!(
                "{} tiles do not fit a {}x{} grid",
                self.tiles.len(),
                self.rows,
                self.cols
            )));
        }
        let ts = first.shape();
        if let Some(t) = self.tiles.iter().find(|t| t.shape() != ts) {
            return Err(Error::shape(ts, t.shape()));
        }
        let p = self.padding_px;
        let out_shape = Shape::new(
            ts.channels,
            self.rows * ts.height + (self.rows - 1) * p,
            self.cols * ts.width + (self.cols - 1) * p,
        );
        let mut out = Tensor::from_raw(out_shape, vec![self.pad_value; out_shape.len()]);
        for (k, tile) in self.tiles.iter().enumerate() {
            let (y0, x0) = self.offset(k / self.cols, k % self.cols, ts);
            for c in 0..ts.channels {
                for r in 0..ts.height {
                    let src = &tile.channel(c)[r * ts.width..][..ts.width];
                    let start = out.offset(c, y0 + r, x0);
                    out.data_mut()[start..start + ts.width].copy_from_slice(src);
                }
            }
        }
        Ok(out)
    }
}

pub fn montage(tiles: &[Tensor], rows: usize, cols: usize, padding: usize) -> Result<Tensor> {
    Montage::new(tiles.to_vec(), rows, cols, padding).render()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Each tile stretched to `[0, 1]` independently.
    #[default]
    PerTile,
    /// One min/max over all tiles.
    Global,
}

pub fn normalize_all(patterns: &[Tensor], mode: Normalization) -> Vec<Tensor> {
    match mode {
        Normalization::PerTile => patterns.iter().map(Tensor::minmax_normalize).collect(),
        Normalization::Global => {
            let (lo, hi) = patterns.iter().map(Tensor::min_max).fold(
                (f32::INFINITY, f32::NEG_INFINITY),
                |(a, b), (lo, hi)| (a.min(lo), b.max(hi)),
            );
            let range = hi as f64 - lo as f64;
            patterns
                .iter()
                .map(|t| {
                    let data = t
                        .data()
                        .iter()
                        .map(|&v| {
                            if range > 0.0 {
                                (((v as f64 - lo as f64) / range) as f32).clamp(0.0, 1.0)
                            } else {
                                0.5
                            }
                        })
                        .collect();
                    Tensor::from_raw(t.shape(), data)
                })
                .collect()
        }
    }
}

/// Normalizes raw patterns and lays them out on a grid.
pub fn pattern_grid(
    patterns: &[Tensor],
    rows: usize,
    cols: usize,
    padding: usize,
    mode: Normalization,
) -> Result<Tensor> {
    Montage::new(normalize_all(patterns, mode), rows, cols, padding).render()
}
