//! Semantic-segmentation refinement toolkit.
//!
//! Coarse per-pixel class score maps (as produced by a convolutional
//! classifier at, say, 1/8 resolution) are bilinearly upsampled and
//! sharpened with a fully-connected CRF whose Gaussian pairwise kernels
//! are evaluated by high-dimensional filtering over a permutohedral
//! lattice. The crate also carries the surrounding numerics: the hole
//! ("atrous") convolution and receptive-field arithmetic used to produce
//! such score maps densely, segmentation metrics with void handling and
//! boundary-band variants, and coarse-to-fine search over the CRF kernel
//! parameters.
//!
//! Modules:
//! - [`tensor`] / [`io`]: dense containers and bit-exact file formats.
//! - [`filtering`]: exact and lattice-accelerated Gaussian filtering.
//! - [`densecrf`]: CRF energy, mean-field steps, inference.
//! - [`atrous`]: hole convolution, zero-stuffing, receptive fields,
//!   bilinear upsampling.
//! - [`eval`]: confusion matrices, mean IOU, trimap bands.
//! - [`tune`]: coarse-to-fine kernel-parameter search.
//! - [`synth`]: deterministic synthetic benchmarks.
//! - [`cli`]: the manifest-driven batch commands behind the binary.

pub mod atrous;
pub mod cli;
pub mod densecrf;
mod error;
pub mod eval;
pub mod filtering;
pub mod io;
pub mod synth;
pub mod tensor;
pub mod tune;

pub use error::{Error, Result};
