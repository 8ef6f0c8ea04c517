//! Files, command line and timing for kernelized VLAD encoders built on
//! `kvlad-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod export;
pub mod format;
