//! Rigid point cloud registration with a full-transformer matching pipeline.
//!
//! The crate is organized around the stages of the registration pipeline:
//!
//! - [`geom`] — point clouds, rigid transforms, synthetic pair generation,
//!   and evaluation metrics.
//! - [`knn`] — exact k-nearest-neighbor queries in 3D.
//! - [`tensor`] — a dense f64 tensor with reverse-mode automatic
//!   differentiation, Adam, and checkpoint serialization.
//! - [`nn`] — multi-head attention, transformer encoder/decoder blocks,
//!   squeeze-and-excitation recalibration.
//! - [`pse`] — per-cloud structural feature extraction (local feature
//!   integration alternating with self-attention encoders).
//! - [`pft`] — cross-cloud feature interaction (positional encoding plus a
//!   deep-narrow encoder-decoder stack).
//! - [`matching`] — similarity matrix, correspondence extraction, weighted
//!   Procrustes estimation, and an ICP baseline.
//! - [`gmcce`] — geometric correspondence confidence from triangulated
//!   side-length consistency.
//! - [`loss`] — transformation, cycle-consistency, and discrimination losses.
//! - [`pipeline`] — model assembly, training loop, dataset generation and
//!   evaluation campaigns.

pub mod geom;
pub mod gmcce;
pub mod knn;
pub mod loss;
pub mod matching;
pub mod nn;
pub mod pft;
pub mod pipeline;
pub mod pse;
pub mod svd3;
pub mod tensor;

pub use geom::{PairSample, PointCloud, RigidTransform};
pub use tensor::{Tape, Tensor, TensorError};
