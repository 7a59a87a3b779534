//! Differentiable U-Net segmentation toolkit for short-axis cardiac MRI.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `(N, C, H, W)` tensors, a reverse-mode tape and a
//!   finite-difference gradient checker.
//! - [`layers`]: convolution, activations, pooling, upsampling, cropping,
//!   concatenation and drop-connect.
//! - [`norm`]: batch/layer/instance/group normalization and the learned
//!   group+batch and instance+batch blends.
//! - [`model`]: the five U-Net variants (plain, BN, LN, IB, GB).
//! - [`augment`]: elastic, affine and rotation augmentation on image/mask pairs.
//! - [`metrics`]: Dice, sensitivity, contour extraction and average
//!   perpendicular distance.
//! - [`data`]: DICOM subset reader, contour files, patient-wise splits and a
//!   synthetic cardiac phantom generator.
//! - [`engine`]: losses, optimizers, the training loop, evaluation and
//!   checkpoints.
//!
//! With the default `parallel` feature, batch-level loops run on rayon. Every
//! parallel path has a sequential twin selected through [`Exec`]; both produce
//! bit-identical results.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod data;
pub mod engine;
mod error;
pub mod exec;
pub mod gradsuite;
pub mod grid;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod norm;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use grid::Grid;
pub use tensor::{Shape, Tape, Tensor, Var};
