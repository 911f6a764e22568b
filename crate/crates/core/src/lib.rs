//! Oriented object detection with a hybrid single-anchor region proposal
//! network.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: rotated boxes, polygon-clipping IoU, NMS, min-area rectangles.
//! * [`anchors`], [`coders`], [`assign`]: anchor grids, box deltas and labelling.
//! * [`netcore`]: tensors with hand-written forward/backward operations.
//! * [`oaware`]: orientation-aware convolution driven by anchor shape and angle.
//! * [`rpn`]: the two-stage (anchor-free then anchor-based) proposal network.
//! * [`heads`]: RoI pooling, horizontal-to-oriented transform and box heads.
//! * [`model`], [`train`]: the assembled detector and its training loop.
//! * [`data`]: DOTA annotations, tiling, synthetic scenes and mAP evaluation.

pub mod anchors;
pub mod assign;
pub mod coders;
pub mod data;
pub mod error;
pub mod geometry;
pub mod heads;
pub mod model;
pub mod netcore;
pub mod oracle;
pub mod oaware;
pub mod rpn;
pub mod selfcheck;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/anchors.md")]
    mod anchors {}
    #[doc = include_str!("../../../book/src/oaware.md")]
    mod oaware {}
    #[doc = include_str!("../../../book/src/detector.md")]
    mod detector {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
