//! Safety and string-stability toolkit for platoons of adaptive-cruise vehicles.

// `!(x > y)` is used throughout so that NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod controller;
pub mod error;
pub mod io;
pub mod numerics;
pub mod safety;
pub mod scenario;
pub mod simulator;
pub mod spacing_policy;

pub use error::{Error, Result};
