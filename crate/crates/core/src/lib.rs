//! Integrated-gradients attributions with base-points chosen so that the
//! attribution lies in the tangent space of the data manifold.
//!
//! See the guide under `book/` for a tour of the modules.

// `!(a > b)` deliberately treats NaN as a failed check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod basepoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod manifold;
pub mod nn;
pub mod numerics;
pub mod plot;

pub use error::{Error, Result};
pub use numerics::{Matrix, OrthonormalBasis, Vector};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/attribution.md")]
    mod attribution {}
    #[doc = include_str!("../../../book/src/tangent-spaces.md")]
    mod tangent_spaces {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
}
