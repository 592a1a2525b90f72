//! Parallel MRI reconstruction with sparse SENSE.
//!
//! The crate bundles the pieces needed to train and evaluate an unrolled
//! projected-ISTA network on synthetic multi-coil data:
//!
//! * [`numerics`]: complex images and centered unitary FFTs
//! * [`sense`]: the coil-sensitivity encoding operator and data consistency
//! * [`frame`]: an undecimated Haar tight frame and complex soft-thresholding
//! * [`pista`]: the classical iterative solver
//! * [`net`]: the unrolled residual network with hand-written gradients
//! * [`train`]: Adam, checkpoints and gradient checking
//! * [`metrics`]: RLNE, mean SSIM and aggregate reports
//! * [`sim`] and [`io`]: synthetic acquisitions and the on-disk array format
//!
//! Batch-level loops go through [`par::Exec`], which uses rayon when the
//! `parallel` feature is on and falls back to plain iteration otherwise.

pub mod error;
pub mod frame;
pub mod io;
pub mod metrics;
pub mod net;
pub mod numerics;
pub mod par;
pub mod pista;
pub mod sense;
pub mod sim;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use numerics::{fft2c, ifft2c, inner, ComplexImage, RealFeatureMap};
pub use par::Exec;
