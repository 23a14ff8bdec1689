//! Command-line workflows and the HTTP query service.

pub mod commands;
pub mod server;

pub use commands::ModelKind;
pub use server::{router, serve};
