//! Getting machine state to a tracer elsewhere: snapshot files and the
//! debug-stub protocol.

pub mod client;
pub mod proto;
pub mod server;
pub mod snapfile;

pub use client::{remote_snapshot, Client, ClientError};
pub use proto::{Request, Response, StopReason};
pub use server::{serve, serve_connection, Stub};
pub use snapfile::{load_snapshot, save_snapshot, SnapError};
