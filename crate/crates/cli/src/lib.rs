//! Library side of the `rt3` command: run configuration, artifact files and
//! the pipeline stages.

// `!(x > 0.0)` style guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod config;
pub mod pipeline;
