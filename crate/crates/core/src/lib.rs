//! Receptive-field visualization for VGG-style convolutional encoders.
//!
//! A single neuron at a pooling layer is clamped to a constant inside an
//! otherwise empty feature map, then projected back to image space by
//! upsampling, transposed convolution and ReLU. The resulting pattern can
//! be fed forward again to check which channels it drives.
//!
//! The crate is organized as:
//!
//! - [`tensor`]: dense `(channel, row, col)` arrays
//! - [`nn`]: layers, the VGG-19 encoder and the traced forward pass
//! - [`weights`]: manifest + binary payload loader/writer
//! - [`backproject`]: seeds, unpooling, deconvolution, the reverse pass
//! - [`validation`]: per-channel activation reports
//! - [`viz`]: PGM/PPM output and montage grids

pub mod backproject;
pub mod cli;
pub mod error;
pub mod nn;
pub mod tensor;
pub mod validation;
pub mod viz;
pub mod weights;

pub use error::{Error, Result, WeightsError};
pub use tensor::{Shape, Tensor};
