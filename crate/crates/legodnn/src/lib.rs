//! File formats, unit parsing and the command-line front end of the
//! block-grained scaling toolkit.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod format;
pub mod units;
