//! Blocked GPU-style convolution kernels from metaprogrammed templates,
//! verified against naive oracles by an emulator for their schedule IR.

pub mod analysis;
pub mod bench;
pub mod codegen;
pub mod error;
pub mod executor;
pub mod nda;
pub mod netops;
pub mod planner;
pub mod twin;

pub use error::{Error, Result};
