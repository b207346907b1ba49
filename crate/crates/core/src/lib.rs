pub mod analysis;
pub mod coupling;
pub mod error;
pub mod linalg;
pub mod linear1d;
pub mod material;
pub mod richards2d;
pub mod scenarios;
pub mod surface1d;

pub use error::{Error, Result};
