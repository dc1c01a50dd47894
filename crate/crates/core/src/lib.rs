pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod oa;
pub mod ordering;
pub mod process;
pub mod rng;
pub mod schedule;
pub mod train;
pub mod upscale;

pub use error::{Error, Result};
