//! Growth-rate optimal e-statistics for group-invariant hypothesis tests.

pub mod eprocess;
pub mod error;
pub mod finite_group;
pub mod io;
pub mod lt_group;
pub mod mc;
pub mod quad;
pub mod regression;
pub mod specfun;
pub mod ttest;
pub mod verify;

pub use error::{Error, Result};
