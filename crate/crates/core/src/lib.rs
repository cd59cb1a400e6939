//! Simulation and parameter design for Q-filter disturbance-observer loops
//! under bounded measurement noise.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod design;
pub mod dob;
pub mod error;
pub mod inf_float;
pub mod linalg;
pub mod model;
pub mod roots;
pub mod scenario;
pub mod sim;
pub mod signals;
pub mod transform;

pub use error::{Error, Result};
