//! Denoising of 2-D grid images with a data-driven regularization parameter.
//!
//! A candidate reconstruction is accepted when its residuals look like white
//! noise on every dyadic square of the image: the normalized residual sum
//! `omega_P = sum_P r / sqrt(#P)` must stay below `sigma * sqrt(delta * ln n^2)`.
//! Where it does not, the diffusivity is reduced on exactly that square (or on
//! the worst wedge cutting it), so smoothing stays strong in flat regions and
//! vanishes at edges.
//!
//! Modules, bottom-up:
//!
//! - [`grid`]: dense grids, summed-area tables, row prefix sums.
//! - [`partition`]: dyadic squares and wedges.
//! - [`mrc`]: coefficients, the scan, `M_n`, noise-level estimation.
//! - [`calibrate`]: Monte-Carlo thresholds and extreme-value checks.
//! - [`solvers`]: diffusion and smoothed-TV reconstructions.
//! - [`adapt`]: global and local parameter selection.
//! - [`noise_sim`]: phantoms and seeded noise.
//! - [`io`] and [`cli`]: file formats and the command-line front end.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod calibrate;
pub mod cli;
pub mod error;
pub mod grid;
pub mod io;
pub mod mrc;
pub mod noise_sim;
pub mod partition;
pub mod solvers;

pub use error::{Error, Result};
pub use grid::{Grid, Rect, SummedAreaTable};

// The guide's chapters compile and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/criterion.md")]
    mod criterion {}
    #[doc = include_str!("../../../book/src/partitions.md")]
    mod partitions {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/solvers.md")]
    mod solvers {}
    #[doc = include_str!("../../../book/src/adaptation.md")]
    mod adaptation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
