#![no_std]

extern crate alloc;

pub mod density;
pub mod error;
pub mod field;
pub mod flow;
pub mod limit;
pub mod mc;
pub mod model;
pub mod pricing;
pub mod stats;

pub use error::{Error, Result};
pub use field::{CoefficientField, FieldShape};
pub use model::ChainedSystem;
