pub mod cli;
pub mod correlator;
pub mod error;
pub mod fitkit;
pub mod ratemodel;
pub mod spinsim;

pub use error::{Error, Result};
