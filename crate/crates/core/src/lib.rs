// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod error;
pub mod factors;
pub mod graph;
pub mod lie;
pub mod magnus;
pub mod metrics;
pub mod ode;
pub mod pipeline;
pub mod scenario;
pub mod solver;
pub mod truth;

pub use error::{Error, Result};
