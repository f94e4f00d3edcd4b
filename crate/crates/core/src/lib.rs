pub mod cli;
pub mod dlm;
pub mod error;
pub mod gsop;
pub mod io;
pub mod linalg;
pub mod postulate;
pub mod pspp;
pub mod random;
pub mod sim;
pub mod sop;

pub use error::{Error, Result};
