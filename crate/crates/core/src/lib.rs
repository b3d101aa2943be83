pub mod augment;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod meta_loop;
pub mod optim;
pub mod reweighter;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
