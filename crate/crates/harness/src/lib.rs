#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod config;
pub mod log;
pub mod metrics;
pub mod plot;
pub mod runner;
pub mod tune;
