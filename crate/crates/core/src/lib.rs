//! Numerical core for training domain-adaptive genuine/fake classifiers.
//!
//! Everything in this crate is deterministic, single-threaded and allocation
//! based; it is `no_std` (with `alloc`) so the heavy lifting stays portable
//! and bit-reproducible. The companion `kadapt` crate adds file formats, the
//! synthetic benchmark and the command line.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`]: dense row-major `f64` tensors, the unit of all computation.
//! - [`tape`] / [`ops`]: a recording tape for reverse-mode differentiation
//!   over the layer operations a small convolutional classifier needs
//!   (convolution, max pooling, batch normalization, dense layers, softmax
//!   cross-entropy) plus a squared-MMD node so domain losses backpropagate
//!   into the feature extractor.
//! - [`kernel`]: Gaussian-RBF mixture kernels, Gram matrices and the biased /
//!   unbiased squared-MMD estimators with analytic gradients.
//! - [`adam`]: bias-corrected Adam updates over keyed parameter maps.
//! - [`model`]: a configurable conv/pool/dense classifier that exposes the
//!   flattened activations of its last pooling layer as the feature map fed
//!   to the domain loss.
//! - [`sampler`]: sample pools and the Two-Half batch stream (equal source
//!   and target halves, targets recycled with replacement when scarce).
//! - [`train`]: the classification + domain objectives (unsupervised whole-
//!   distribution matching and semi-supervised intra-modality matching) and
//!   the Adam training loop.
//! - [`metrics`]: frame-to-video score aggregation, FAR/FRR, development-set
//!   EER threshold selection, HTER and rank-statistic ROC AUC.
//! - [`pca`]: principal-component projection for feature-space inspection.
//! - [`gradcheck`]: central-finite-difference gradient verification used by
//!   the test suites and available to callers.

#![no_std]
// Negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
// along with out-of-range values. Indexed loops mirror the flat row-major
// buffer math and stay.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod pca;
pub mod rng;
pub mod sampler;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
pub use tensor::Tensor;
