#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod auxflow;
pub mod bathtub;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod energy;
mod fw;
pub mod geometry;
pub mod jko;
pub mod transport;
