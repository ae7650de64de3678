//! Directional H²-matrices for the three-dimensional Helmholtz kernel.
//!
//! The crate builds a directional interpolation approximation of the
//! oscillatory kernel `exp(iκ|x-y|) / (4π|x-y|)` on a hierarchical block
//! partition and recompresses it algebraically:
//!
//! 1. [`geometry`] generates point clouds on the unit sphere and provides
//!    axis-parallel boxes.
//! 2. [`tree`] builds the cluster tree, the level-wise direction families and
//!    the directed block tree.
//! 3. [`kernel`] evaluates the kernel and assembles leaf, transfer and
//!    coupling matrices by tensor Chebyshev interpolation.
//! 4. [`dh2`] holds the resulting matrix, its fast matrix-vector product and
//!    storage accounting.
//! 5. [`weights`] computes basis weights, total weights, norm estimates and
//!    compressed basis weights.
//! 6. [`recompress`] constructs adaptive isometric cluster bases, projects the
//!    coupling matrices and verifies the error representation.

pub mod dh2;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod linalg;
pub mod recompress;
pub mod tree;
pub mod weights;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec};
