//! Reduction of differential inclusions by regular functions, set-valued
//! Lyapunov derivatives over box-valued maps, grid certification and
//! selection-based simulation.

pub mod certify;
pub mod derivative;
pub mod error;
pub mod expr;
pub mod fixtures;
pub mod interval;
pub mod reduction;
pub mod setmap;
pub mod simulate;
pub mod system;

pub use error::{Error, Result};
