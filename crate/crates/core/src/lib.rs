pub mod data;
mod error;
pub mod io;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod protocol;
pub mod tensor;
pub mod train;

pub use error::{DataError, Error, ErrorKind, Result};
