//! File formats, dataset IO and the command-line driver for FeatherNet. The
//! numerical work lives in `feathernet-core`.

pub mod cli;
pub mod config;
pub mod files;
pub mod fuse_io;
pub mod manifest;
pub mod pgm;
