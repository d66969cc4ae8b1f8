pub mod calib;
#[cfg(feature = "cli")]
pub mod cli;
pub mod diff;
pub mod error;
pub mod fsutil;
pub mod harness;
pub mod lm;
pub mod rouge;

mod codec;

pub use error::{Error, Result};
