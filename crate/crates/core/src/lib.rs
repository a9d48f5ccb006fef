//! Microstructure synthesis core.
//!
//! Everything in this crate is pure computation over in-memory values and
//! only needs an allocator: image and patch types, minimum-error-boundary
//! quilting, a small reverse-mode autodiff tape with Adam, the style-based
//! generator and critic, adversarial training, binarization recipes,
//! Minkowski functionals and periodic elastic homogenization.
//!
//! File formats, the CLI and pipeline orchestration live in the `microforge`
//! crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod homog;
pub mod image;
pub mod metrology;
pub mod postproc;
pub mod quilt;
pub mod rng;
pub mod stylenet;
pub mod synth;
pub mod tensor;
pub mod train;

pub use image::{BinaryMask, GrayImage, ImageError, PatchSet};
pub use rng::SquaresRng;
