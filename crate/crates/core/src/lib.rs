//! Hydropower unit-dispatch engine: hourly plant and unit records, turbine
//! efficiency curves, cascade lag analysis, a per-category commitment model
//! and head-derated unit allocation with efficiency correction.

// `!(x > 0.0)` is the idiom here for rejecting NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Dense linear algebra reads more clearly with index loops.
#![allow(clippy::needless_range_loop)]

pub mod datastore;
pub mod dispatch;
pub mod efficiency;
pub mod error;
pub mod hydrology;
pub mod interdependency;
pub mod ml;
pub mod stats;

pub use error::{Error, Result};
