//! Operational shell around `arena-core`: the HTTP API for remote and human
//! performers, per-evaluation sessions persisted as JSON lines, a client,
//! and the `arena` command line.

pub mod api;
pub mod cli;
pub mod client;
pub mod server;
pub mod session;
