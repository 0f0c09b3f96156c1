//! Standard-library side of the two-party engine: in-process and TCP
//! links, public-key oblivious transfer, pool/checkpoint/IDX files, run
//! configuration with a hash handshake, and the command implementations
//! behind the `secshare` binary.

pub mod config;
pub mod error;
pub mod formats;
pub mod link;
pub mod ot;
pub mod report;
pub mod run;

pub use error::{AppError, AppResult};
