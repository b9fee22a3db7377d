pub mod autodiff;
pub mod cli;
pub mod error;
pub mod graph;
pub mod model;
pub mod train;

pub use error::{Error, Result};
