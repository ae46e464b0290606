//! Core engine for the FeatherNet family of light-weight face anti-spoofing
//! networks.
//!
//! Everything in this crate is pure computation over owned buffers: dense
//! rank-4 tensors with hand-written forward/backward kernels, the inverted
//! residual / SE / streaming building blocks, the assembled FeatherNet A and B
//! models with exact cost accounting, the training math (focal loss, He
//! initialisation, momentum SGD), depth augmentation, a synthetic depth-face
//! generator, anti-spoofing metrics and the two-stage ensemble + cascade
//! fusion rule. File and process IO live in the `feathernet` crate.
#![no_std]

extern crate alloc;

pub mod arch;
pub mod augment;
pub mod blocks;
pub mod error;
pub mod fusion;
mod gemm;
pub mod gradcheck;
pub mod image;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod reference;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod weights;

pub use arch::{ArchSpec, HeadKind, Variant};
pub use error::{Error, Result};
pub use model::Model;
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
