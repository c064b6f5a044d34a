//! Two-level compression and run-time reconfiguration for small dense models.
//!
//! Level one removes whole rows or columns inside blocks of every weight
//! matrix ([`pruning`]). Level two searches, per DVFS operating point, a set of
//! tile patterns over the pruned backbone ([`pattern`], [`search`]), trains the
//! backbone jointly under all chosen sets ([`trainer`]) and, at run time, swaps
//! pattern sets as the battery drains and the frequency drops ([`runtime`]).

// `!(x > 0.0)` style guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod dataset;
pub mod error;
pub mod matrix;
pub mod model;
pub mod pattern;
pub mod perf;
pub mod pruning;
pub mod runtime;
pub mod search;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use matrix::{BlockPartition, Mask, WeightMatrix};
pub use model::ToyModel;
pub use pattern::{Pattern, PatternSet, SparsityLadder};
pub use perf::{DvfsTable, PerfModel, VfLevel};
