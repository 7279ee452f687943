pub mod error;
pub mod estimation;
pub mod experiment;
pub mod hybrid;
pub mod information;
pub mod linalg;
pub mod sensitivity;
pub mod systems;

pub use error::{Error, Result};
