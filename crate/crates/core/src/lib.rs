#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod connectivity;
pub mod dsp;
pub mod error;
pub mod model;
pub mod mvar;
pub mod pipeline;
pub mod relevance;
pub mod signal_io;

pub use error::{Error, Result};
