//! Host-side half of kinact: file formats, UDP transport, timing, the
//! experiment drivers and the `kinact` command line.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod timing;
pub mod udp;

pub use error::{Error, Result};
