pub mod bench;
mod binio;
pub mod error;
pub mod fusion;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod report;
pub mod store;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
