//! Automatic volumetric segmentation of a tubular organ in CT.
//!
//! The pipeline runs a dual-path 3D fully convolutional network ([`fcnn`]),
//! fits a per-slice active contour to its probability map ([`acm`]), and
//! fuses both with an intensity prior ([`priors`]) in a seed-free random
//! walker ([`rw`]). [`metrics`] scores results and [`phantom`] synthesises
//! ground-truth data.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the
//! command line live in the companion `esoseg` crate.

#![no_std]
// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod acm;
pub mod error;
pub mod fcnn;
pub mod metrics;
pub mod phantom;
pub mod postproc;
pub mod priors;
pub mod rw;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Volume3D, VolumeKind};
