//! Pipeline stages behind the `rpsf` binary.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;
