//! Computational core for pure state-space-model camera/LiDAR fusion.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense tensors, activations, seeded RNG, finite differences.
//! - [`geometry`]: voxelization, continuous-space centroids, voxel generation
//!   with the conflict test, camera projection and lift-to-BEV.
//! - [`serialization`]: Hilbert / Z-order / coordinate curves and local regions.
//! - [`ssm`]: the selective scan (sequential, parallel, bidirectional, backward).
//! - [`hybrid`]: local/global Mamba blocks, modality alignment, fusion, ERF probe.
//! - [`harness`]: synthetic scenes, evaluations, scaling benchmarks, reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod harness;
pub mod hybrid;
pub mod kv;
pub mod numerics;
pub mod serialization;
pub mod ssm;
pub mod tokens;

pub use error::{Error, Result};
pub use numerics::{Precision, Real, SeededRng, Tensor};
pub use tokens::{Modality, TokenSequence};
