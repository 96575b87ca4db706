// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bloch;
pub mod cli;
pub mod comb;
pub mod error;
pub mod io;
pub mod physcore;
pub mod protocol;
pub mod pumping;
pub mod spinline;

pub use error::{Error, Result};
