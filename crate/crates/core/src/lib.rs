pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod optim;
pub mod schedule;
pub mod verify;

pub use error::{Error, Result};
pub use loss::{Dataset, MarginCertificate, Weights};
