//! Cross-connected multi-task CNNs for joint detection and segmentation.
//!
//! Two single-task networks are pre-trained independently, then joined by
//! 1x1 convolutions that add each stream's activation maps into the other.
//! The crate also carries the comparison baselines (cross-stitch and Share-k
//! parameter sharing), the two-phase training procedure, a synthetic data
//! generator, and the evaluation metrics.

pub mod error;
pub mod evalmetrics;
pub mod gradcheck;
pub mod netgraph;
pub mod ops;
pub mod synthdata;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Shape, Tensor};
