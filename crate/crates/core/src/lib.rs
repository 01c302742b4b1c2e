// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataio;
pub mod evaluate;
pub mod graph;
pub mod model;
pub mod preprocess;
pub mod train;
