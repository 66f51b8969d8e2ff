#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod closed_form;
pub mod digital;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod hybrid;
pub mod imaging;
pub mod io;
pub mod numerics;
pub mod operator;
pub mod problem;
pub mod seeds;
pub mod steering;

pub use error::{Error, Result};
