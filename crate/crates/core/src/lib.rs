//! Acceleration-command realization for fixed-wing aircraft.
//!
//! The crate covers NED frame algebra, a point-mass airframe with rate and
//! thrust lags, the outer loop that turns acceleration commands into body
//! rates and thrust, in-flight identification of the thrust-to-energy map,
//! and proportional-navigation guidance.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod frames;
pub mod guidance;
pub mod identification;
pub mod outer_loop;
pub mod regression;
pub mod vehicle;

pub use error::{Error, Result};
